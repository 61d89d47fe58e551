#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdio>
#include <string>
#include <string_view>

#include "stcn/error.hpp"

namespace stcn {

// Calendar day, stored as days since 1970-01-01.
class Date {
public:
    constexpr Date() = default;
    constexpr explicit Date(std::chrono::sys_days d) : days_(d.time_since_epoch().count()) {}

    static constexpr Date from_days(long days) {
        Date d;
        d.days_ = days;
        return d;
    }

    static Date parse(std::string_view text) {
        int y = 0;
        unsigned m = 0, d = 0;
        auto bad = [&] { fail(ErrorKind::ParseError, "invalid ISO-8601 date '" + std::string(text) + "'"); };
        if (text.size() != 10 || text[4] != '-' || text[7] != '-') bad();
        auto field = [&](std::size_t pos, std::size_t len, auto& out) {
            auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
            if (ec != std::errc{} || ptr != text.data() + pos + len) bad();
        };
        field(0, 4, y);
        field(5, 2, m);
        field(8, 2, d);
        std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
        if (!ymd.ok()) bad();
        return Date(std::chrono::sys_days(ymd));
    }

    std::string iso() const {
        std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days_}}};
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                      static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
        return buf;
    }

    constexpr long days() const { return days_; }
    constexpr Date plus_days(long n) const { return from_days(days_ + n); }

    friend constexpr auto operator<=>(const Date&, const Date&) = default;

private:
    long days_ = 0;
};

} // namespace stcn
