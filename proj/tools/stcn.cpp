// stcn: command-line front end for the spatiotemporal causal network pipeline.
//
// Every subcommand reads one JSON run config (--config). Relative paths inside
// the config resolve against the config file's directory. Artifacts go to
// --output; each JSON artifact carries a "run" block with the config hash and
// seed, and wall-clock timestamps live only in <command>.meta.json.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stcn/stcn.hpp"

namespace fs = std::filesystem;
using namespace stcn;

namespace {

struct Context {
    std::string command;
    Json config = Json::object();
    fs::path base = ".";
    std::uint64_t config_hash = 0;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    fs::path output = ".";
    std::vector<std::string> artifacts;

    std::uint64_t require_seed() const {
        if (!seed) fail(ErrorKind::InvalidArgument, "command '" + command + "' is stochastic and needs --seed or a config seed");
        return *seed;
    }

    Json section(const char* key) const { return config.value(key, Json::object()); }

    fs::path resolve(const std::string& p) const {
        fs::path path(p);
        return path.is_absolute() ? path : base / path;
    }

    Json run_block() const {
        return {{"command", command}, {"config_hash", hex64(config_hash)}, {"seed", seed ? Json(*seed) : Json(nullptr)}};
    }

    void write_text(const std::string& name, const std::string& text) {
        const auto path = output / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
        out << text;
        artifacts.push_back(name);
    }

    void write_json(const std::string& name, Json j) {
        j["run"] = run_block();
        write_text(name, j.dump(2) + "\n");
    }
};

Json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        fail(ErrorKind::ParseError, path.string() + ": " + e.what());
    }
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ------------------------------------------------------------ config parts

std::string dataset_path(const Context& ctx, const std::string& override_path) {
    if (!override_path.empty()) return override_path;
    if (!ctx.config.contains("dataset")) fail(ErrorKind::InvalidArgument, "no dataset given (config 'dataset' or --dataset)");
    return ctx.resolve(ctx.config.at("dataset").get<std::string>()).string();
}

// CSV goes through the config schema; anything ending in .json is read as a
// panel artifact (for example the output of `ingest`).
PanelDataset load_dataset(const Context& ctx, const std::string& path) {
    if (!fs::exists(path)) fail(ErrorKind::Io, "dataset '" + path + "' does not exist");
    if (fs::path(path).extension() == ".json") return panel_from_json(read_json_file(path));
    return load_panel_csv(path, PanelSchema::from_json(ctx.section("schema")));
}

CausalModel load_model(const Context& ctx, const std::string& override_path) {
    std::string path = override_path;
    if (path.empty()) {
        if (!ctx.config.contains("model")) fail(ErrorKind::InvalidArgument, "no model given (config 'model' or --model)");
        path = ctx.resolve(ctx.config.at("model").get<std::string>()).string();
    }
    return model_from_json(read_json_file(path));
}

FitConfig fit_config(const Context& ctx) {
    const auto j = ctx.section("fit");
    FitConfig f;
    f.tolerance = j.value("tolerance", f.tolerance);
    f.max_iterations = j.value("max_iterations", f.max_iterations);
    const auto kernel = j.value("kernel", std::string("exponential"));
    if (kernel == "exponential") f.kernel = KernelMode::exponential;
    else if (kernel == "none") f.kernel = KernelMode::none;
    else fail(ErrorKind::InvalidArgument, "fit.kernel must be 'exponential' or 'none'");
    f.group_weights = j.value("group_weights", f.group_weights);
    f.min_rows = j.value("min_rows", f.min_rows);
    if (j.contains("kernel_init"))
        f.kernel_init = KernelParams{j["kernel_init"].at("range_km").get<double>(), j["kernel_init"].at("nugget").get<double>()};
    return f;
}

SearchConfig search_config(const Context& ctx, std::uint64_t seed) {
    const auto j = ctx.section("search");
    SearchConfig s;
    s.tenure = j.value("tenure", s.tenure);
    s.patience = j.value("patience", s.patience);
    s.restarts = j.value("restarts", s.restarts);
    s.perturb_moves = j.value("perturb_moves", s.perturb_moves);
    s.bootstrap = j.value("bootstrap", s.bootstrap);
    s.threshold = j.value("threshold", s.threshold);
    s.seed = seed;
    s.threads = ctx.threads;
    s.fit = fit_config(ctx);
    return s;
}

ConstraintSet constraints(const Context& ctx, const std::vector<VariableSpec>& vars) {
    Json j = ctx.section("constraints");
    if (ctx.config.contains("constraint_file"))
        j = read_json_file(ctx.resolve(ctx.config.at("constraint_file").get<std::string>()));
    ConstraintSet cs;
    if (j.value("defaults", true)) {
        cs = default_constraints(vars, j.value("condition_self_loops", true));
    } else {
        for (const auto& v : vars) cs.variables[v.name] = v;
    }
    for (const auto& a : j.value("whitelist", Json::array())) cs.whitelist.insert(arc_from_json(a));
    for (const auto& a : j.value("blacklist", Json::array())) cs.blacklist.insert(arc_from_json(a));
    cs.validate();
    return cs;
}

DiagnosticOptions diagnostic_options(const Context& ctx, std::optional<std::uint64_t> seed) {
    const auto j = ctx.section("diagnose");
    DiagnosticOptions o;
    o.max_lag = j.value("max_lag", o.max_lag);
    o.min_points = j.value("min_points", o.min_points);
    o.alpha = j.value("alpha", o.alpha);
    o.min_group_size = j.value("min_group_size", o.min_group_size);
    o.spatial.cutoff_km = j.value("cutoff_km", o.spatial.cutoff_km);
    o.spatial.range_multiplier = j.value("range_multiplier", o.spatial.range_multiplier);
    o.spatial.min_sites = j.value("min_sites", o.spatial.min_sites);
    o.spatial.permutations = j.value("permutations", o.spatial.permutations);
    if (o.spatial.permutations > 0) {
        if (!seed) fail(ErrorKind::InvalidArgument, "permutation p-values need --seed or a config seed");
        o.spatial.seed = *seed;
    }
    o.threads = ctx.threads;
    return o;
}

std::vector<double> c_values(const Context& ctx, const std::vector<double>& flag) {
    if (!flag.empty()) return flag;
    const auto j = ctx.section("score");
    if (j.contains("c_values")) return j.at("c_values").get<std::vector<double>>();
    return {2.0, 4.0, 8.0, 16.0, 32.0};
}

double learn_c(const Context& ctx, std::optional<double> flag) {
    if (flag) return *flag;
    return ctx.section("score").value("c", 2.0);
}

std::string dag_text(const TwoSliceDag& dag) {
    std::ostringstream os;
    for (const auto& a : dag.arcs()) os << "  " << a.label() << "\n";
    return os.str();
}

// --------------------------------------------------------------- commands

struct Overrides {
    std::string dataset, model, query;
    std::vector<std::string> models;
    std::vector<double> c_sweep;
    std::optional<double> c;
    std::optional<double> max_missing;
};

void cmd_ingest(Context& ctx, const Overrides& ov) {
    auto ds = load_dataset(ctx, dataset_path(ctx, ov.dataset));
    const double max_missing = ov.max_missing ? *ov.max_missing : ctx.section("coverage").value("max_missing", 0.5);
    auto kept = filter_coverage(ds, max_missing);
    ctx.write_json("dataset.json", to_json(kept));
    std::ostringstream os;
    os << "input: " << ds.n_locations() << " locations, " << ds.n_weeks() << " weeks, " << ds.n_variables()
       << " variables\n";
    os << "kept:  " << kept.n_locations() << " locations, " << kept.n_weeks() << " weeks, " << kept.n_variables()
       << " variables (max missing share " << max_missing << ")\n";
    os << "dataset hash " << hex64(kept.hash()) << "\n";
    ctx.write_text("ingest.txt", os.str());
    std::cout << os.str();
}

void cmd_simulate(Context& ctx) {
    if (!ctx.config.contains("generator")) fail(ErrorKind::InvalidArgument, "config has no 'generator' section");
    auto spec = generator_spec_from_json(ctx.config.at("generator"));
    spec.seed = ctx.require_seed();
    std::cout << "seed: " << spec.seed << "\n";
    auto g = generate(spec);
    g.truth.provenance.seed = spec.seed;
    g.truth.provenance.config_hash = ctx.config_hash;

    const auto csv = ctx.output / "panel.csv";
    save_panel_csv(csv.string(), g.data);
    ctx.artifacts.push_back("panel.csv");
    ctx.write_json("panel.json", to_json(g.data));
    Json schema = schema_of(g.data).to_json();
    schema["format"] = "stcn.schema/1";
    ctx.write_json("schema.json", schema);
    ctx.write_json("truth_model.json", to_json(g.truth));
    ctx.write_json("generator.json", to_json(spec));
    std::cout << "simulated " << g.data.n_locations() << " locations x " << g.data.n_weeks() << " weeks\n";
}

void cmd_learn(Context& ctx, const Overrides& ov) {
    const auto seed = ctx.require_seed();
    std::cout << "seed: " << seed << "\n";
    auto ds = load_dataset(ctx, dataset_path(ctx, ov.dataset));
    const auto cs = constraints(ctx, ds.variables());
    const double c = learn_c(ctx, ov.c);
    const auto cfg = search_config(ctx, seed);
    const auto avg = bootstrap_average(ds, cs, c, cfg);
    auto model = fit_model(avg.consensus, ds, cfg.fit, ctx.threads);
    model.provenance.c = c;
    model.provenance.seed = seed;
    model.provenance.config_hash = ctx.config_hash;
    const auto score = pnal_network(model, ds, c);

    Json avg_json = to_json(avg);
    avg_json["c"] = c;
    ctx.write_json("averaged_dag.json", avg_json);
    ctx.write_json("model.json", to_json(model));
    Json sj = to_json(score);
    sj["format"] = "stcn.score/1";
    ctx.write_json("learn_score.json", sj);

    std::ostringstream os;
    os << "bootstrap replicates " << avg.replicates << ", threshold " << avg.threshold << ", c " << c << "\n";
    os << "consensus arcs:\n" << dag_text(avg.consensus);
    os << "network score " << score.total << "\n";
    ctx.write_text("learn.txt", os.str());
    std::cout << os.str();
}

void cmd_score(Context& ctx, const Overrides& ov) {
    auto ds = load_dataset(ctx, dataset_path(ctx, ov.dataset));
    std::vector<std::string> paths = ov.models;
    if (paths.empty())
        for (const auto& p : ctx.section("score").value("models", Json::array()))
            paths.push_back(ctx.resolve(p.get<std::string>()).string());
    if (paths.size() < 1) fail(ErrorKind::InvalidArgument, "score needs at least one model (config score.models or --model)");
    const auto cs = c_values(ctx, ov.c_sweep);
    const auto fit = fit_config(ctx);

    // Models are refitted on this dataset so every score refers to the same rows.
    std::vector<std::string> names;
    std::vector<CausalModel> fitted;
    for (const auto& p : paths) {
        auto m = model_from_json(read_json_file(p));
        names.push_back(fs::path(p).stem().string());
        fitted.push_back(fit_model(m.dag, ds, fit, ctx.threads));
    }
    Json models = Json::array();
    std::vector<std::vector<ScoreBreakdown>> sb(fitted.size());
    for (std::size_t i = 0; i < fitted.size(); ++i) {
        Json scores = Json::array();
        for (double c : cs) {
            sb[i].push_back(pnal_network(fitted[i], ds, c));
            scores.push_back(to_json(sb[i].back()));
        }
        models.push_back({{"name", names[i]}, {"file", fs::path(paths[i]).filename().string()}, {"dag", to_json(fitted[i].dag)}, {"scores", scores}});
    }
    Json table = Json::array();
    std::ostringstream os;
    os << "c        model_a  model_b  log_bf           bf\n";
    for (std::size_t k = 0; k < cs.size(); ++k)
        for (std::size_t a = 0; a < fitted.size(); ++a)
            for (std::size_t b = a + 1; b < fitted.size(); ++b) {
                const double lbf = log_bayes_factor(sb[a][k], sb[b][k]);
                const double bf = bayes_factor(sb[a][k], sb[b][k]);
                table.push_back({{"c", cs[k]}, {"model_a", names[a]}, {"model_b", names[b]}, {"log_bf", lbf}, {"bf", bf}});
                os << cs[k] << "  " << names[a] << "  " << names[b] << "  " << lbf << "  " << bf << "\n";
            }
    if (fitted.size() == 1)
        for (std::size_t k = 0; k < cs.size(); ++k) os << cs[k] << "  " << names[0] << "  score " << sb[0][k].total << "\n";
    ctx.write_json("score.json",
                   {{"format", "stcn.score_sweep/1"}, {"c_values", cs}, {"models", models}, {"bayes_factors", table},
                    {"dataset_hash", hex64(ds.hash())}});
    ctx.write_text("score.txt", os.str());
    std::cout << os.str();
}

void cmd_diagnose(Context& ctx, const Overrides& ov) {
    auto ds = load_dataset(ctx, dataset_path(ctx, ov.dataset));
    const auto model = load_model(ctx, ov.model);
    if (ctx.seed) std::cout << "seed: " << *ctx.seed << "\n";
    const auto report = misspecification_report(model, ds, diagnostic_options(ctx, ctx.seed));
    ctx.write_json("diagnostics.json", to_json(report, ds.locations()));
    const auto text = text_summary(report);
    ctx.write_text("diagnostics.txt", text);
    std::cout << text;
}

void cmd_predict(Context& ctx, const Overrides& ov) {
    auto ds = load_dataset(ctx, dataset_path(ctx, ov.dataset));
    const auto model = load_model(ctx, ov.model);
    const auto fit = fit_config(ctx);
    const auto j = ctx.section("predict");
    const auto mode = j.value("mode", std::string("temporal"));
    auto r2_json = [](const PredictiveR2& r) {
        return Json{{"per_node", r.per_node}, {"average", r.average}, {"averaged_over", r.averaged_over}};
    };
    Json out{{"format", "stcn.predict/1"}, {"mode", mode}};
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    if (mode == "temporal") {
        if (!j.contains("train_end") || !j.contains("validation_start"))
            fail(ErrorKind::InvalidSplit, "temporal prediction needs predict.train_end and predict.validation_start");
        const auto split = split_temporal(ds, Date::parse(j.at("train_end").get<std::string>()),
                                          Date::parse(j.at("validation_start").get<std::string>()));
        const auto r = predictive_r2(model, split.train, split.validation, fit, ctx.threads);
        out["buffer_weeks"] = split.buffer_weeks;
        out["result"] = r2_json(r);
        out["average_r2"] = r.average;
        for (const auto& [n, v] : r.per_node) os << "R2 " << n << " " << v << "\n";
        os << "R2 average " << r.average << "\n";
    } else if (mode == "spatial") {
        FoldOptions fo;
        fo.k = j.value("folds", fo.k);
        fo.buffer_km = j.value("buffer_km", fo.buffer_km);
        fo.seed = ctx.require_seed();
        std::cout << "seed: " << fo.seed << "\n";
        const auto folds = split_spatial_folds(ds, fo);
        Json fj = Json::array();
        double sum = 0.0;
        for (std::size_t k = 0; k < folds.size(); ++k) {
            const auto r = predictive_r2(model, folds[k].train, folds[k].validation, fit, ctx.threads);
            sum += r.average;
            fj.push_back({{"fold", k}, {"validation_ids", folds[k].validation_ids}, {"dropped_ids", folds[k].dropped_ids},
                          {"result", r2_json(r)}});
            os << "fold " << k << " R2 average " << r.average << "\n";
        }
        out["folds"] = fj;
        out["buffer_km"] = fo.buffer_km;
        out["average_r2"] = sum / static_cast<double>(folds.size());
        os << "R2 average over folds " << out["average_r2"].get<double>() << "\n";
    } else {
        fail(ErrorKind::InvalidArgument, "predict.mode must be 'temporal' or 'spatial'");
    }
    ctx.write_json("predict.json", out);
    ctx.write_text("predict.txt", os.str());
    std::cout << os.str();
}

InterventionSpec intervention_from_json(const Json& j) {
    InterventionSpec iv;
    iv.kind = parse_intervention_kind(j.at("kind").get<std::string>());
    iv.target = j.value("target", std::string());
    iv.value = j.value("value", 0.0);
    for (const auto& a : j.value("arcs", Json::array())) iv.arcs.push_back(arc_from_json(a));
    if (j.contains("scope")) {
        const auto& s = j.at("scope");
        iv.scope.locations = s.value("locations", std::vector<std::string>{});
        iv.scope.first_step = s.value("first_step", iv.scope.first_step);
        iv.scope.last_step = s.value("last_step", iv.scope.last_step);
    }
    return iv;
}

// One-week starting panel from the last week of `ds`. With carry_forward a
// missing cell takes the location's most recent observed value.
PanelDataset initial_state(const PanelDataset& ds, const std::string& mode) {
    if (mode != "carry_forward" && mode != "strict")
        fail(ErrorKind::InvalidArgument, "query 'initial' must be 'carry_forward' or 'strict'");
    if (ds.n_weeks() == 0) fail(ErrorKind::ExhaustedDataset, "initial panel has no weeks");
    const std::size_t L = ds.n_locations(), V = ds.n_variables(), last = ds.n_weeks() - 1;
    std::vector<double> vals(L * V, missing_value());
    std::vector<std::uint8_t> mask(L * V, 1);
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t v = 0; v < V; ++v)
            for (std::size_t w = last + 1; w-- > 0;) {
                if (ds.observed(l, w, v)) {
                    vals[l * V + v] = ds.value(l, w, v);
                    mask[l * V + v] = 0;
                    break;
                }
                if (mode == "strict") break;
            }
    return PanelDataset(ds.locations(), {ds.weeks()[last]}, ds.variables(), std::move(vals), std::move(mask));
}

void cmd_query(Context& ctx, const Overrides& ov) {
    Json q;
    if (!ov.query.empty()) q = read_json_file(ov.query);
    else if (ctx.config.contains("query")) q = ctx.config.at("query");
    else fail(ErrorKind::InvalidArgument, "no query given (config 'query' or --query)");
    const auto model = load_model(ctx, ov.model);
    const auto type = q.at("type").get<std::string>();
    Json out{{"format", "stcn.query/1"}, {"type", type}, {"query", q}};
    std::string text;

    if (type == "simulate" || type == "intervention") {
        const auto seed = ctx.require_seed();
        std::cout << "seed: " << seed << "\n";
        const auto init =
            initial_state(load_dataset(ctx, dataset_path(ctx, ov.dataset)), q.value("initial", std::string("carry_forward")));
        const std::size_t horizon = q.value("horizon", std::size_t{12});
        const std::size_t draws = q.value("draws", std::size_t{200});
        QueryResult r;
        if (type == "simulate") {
            r = simulate(model, init, horizon, draws, seed, ctx.threads);
        } else {
            const auto iv = intervention_from_json(q.at("intervention"));
            r = intervene(model, iv, init, horizon, draws, seed, ctx.threads);
        }
        out["result"] = to_json(r);
        text = to_csv(r);
        ctx.write_text("query.csv", text);
        std::ostringstream os;
        os << std::setprecision(6);
        // Location-averaged delta (or mean) at the final step per node.
        for (const auto& n : r.nodes) {
            const auto& t = r.trajectories.at(n);
            const auto& m = r.has_deltas ? t.delta_mean : t.mean;
            os << n << (r.has_deltas ? " mean delta at step " : " mean at step ") << horizon << ": "
               << m.row(m.rows() - 1).mean() << "\n";
        }
        text = os.str();
    } else if (type == "attribution") {
        MomentOptions mo;
        const auto method = q.value("method", std::string("simulation"));
        if (method == "analytic") {
            mo.method = MomentMethod::analytic;
        } else if (method == "simulation") {
            mo.seed = ctx.require_seed();
            std::cout << "seed: " << mo.seed << "\n";
            mo.chains = q.value("chains", mo.chains);
            mo.chain_length = q.value("chain_length", mo.chain_length);
            mo.burn_in = q.value("burn_in", mo.burn_in);
        } else {
            fail(ErrorKind::InvalidArgument, "attribution method must be 'simulation' or 'analytic'");
        }
        const auto r = variance_attribution(model, q.at("outcome").get<std::string>(), mo);
        out["result"] = to_json(r);
        std::ostringstream os;
        for (const auto& [p, s] : r.shares) os << "share " << p << " " << s << "\n";
        text = os.str();
    } else if (type == "mediation") {
        const auto r = mediation_share(model, q.at("exposure").get<std::string>(),
                                       q.at("mediators").get<std::vector<std::string>>(),
                                       q.at("outcome").get<std::string>(), q.value("lag", std::size_t{4}));
        out["result"] = to_json(r);
        std::ostringstream os;
        if (r.no_effect) os << "no effect of exposure on outcome\n";
        else os << "severed/intact explained variance factor " << r.factor << "\n";
        text = os.str();
    } else if (type == "counterfactual") {
        auto realized = load_dataset(ctx, dataset_path(ctx, ov.dataset));
        const auto r = counterfactual(model, realized, q.at("node").get<std::string>(), q.at("location").get<std::string>(),
                                      Date::parse(q.at("week").get<std::string>()), q.at("value").get<double>(),
                                      q.value("horizon", std::size_t{8}));
        out["result"] = to_json(r);
        std::ostringstream os;
        const auto li = realized.find_location(r.location);
        for (const auto& [n, m] : r.delta) {
            os << n << " delta at " << r.location << ":";
            for (Eigen::Index s = 0; s < m.rows(); ++s) os << " " << m(s, static_cast<Eigen::Index>(*li));
            os << "\n";
        }
        text = os.str();
    } else {
        fail(ErrorKind::InvalidArgument, "query type must be simulate, intervention, attribution, mediation or counterfactual");
    }
    ctx.write_json("query.json", out);
    ctx.write_text("query.txt", text);
    std::cout << text;
}

int report_error(const std::string& kind, const std::string& message, int code) {
    Json e{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
    std::cerr << e.dump() << "\n";
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stcn: spatiotemporal causal network learning, diagnostics and queries"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path, output_dir = ".";
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    app.add_option("--config", config_path, "run config JSON")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "random seed (overrides the config seed)");
    app.add_option("--threads", threads, "worker threads; results do not depend on it")->check(CLI::Range(1u, 1024u));
    app.add_option("--output", output_dir, "artifact directory (created if missing)");

    Overrides ov;
    auto* ingest = app.add_subcommand("ingest", "validate and coverage-filter a panel, emit dataset JSON");
    auto* simulate_data = app.add_subcommand("simulate-data", "generate a synthetic panel from config 'generator'");
    auto* learn = app.add_subcommand("learn", "bootstrap-averaged structure search plus fitted model");
    auto* score = app.add_subcommand("score", "penalised score sweep over c and Bayes factor table");
    auto* diagnose = app.add_subcommand("diagnose", "misspecification tests on a fitted model");
    auto* predict = app.add_subcommand("predict", "predictive R2 on a buffered split");
    auto* query = app.add_subcommand("query", "intervention, attribution, mediation or counterfactual query");
    for (auto* sc : {ingest, learn, score, diagnose, predict, query})
        sc->add_option("--dataset", ov.dataset, "panel CSV or dataset JSON (overrides config 'dataset')");
    for (auto* sc : {diagnose, predict, query})
        sc->add_option("--model", ov.model, "model JSON (overrides config 'model')");
    ingest->add_option("--max-missing", ov.max_missing, "coverage threshold")->check(CLI::Range(0.0, 1.0));
    learn->add_option("--c", ov.c, "penalty weight");
    score->add_option("--c", ov.c_sweep, "penalty weights to sweep");
    score->add_option("--model", ov.models, "model JSON files to compare");
    query->add_option("--query", ov.query, "query JSON (overrides config 'query')");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        return report_error("UsageError", e.what(), 2);
    }

    Context ctx;
    ctx.command = app.get_subcommands().front()->get_name();
    ctx.threads = threads;
    ctx.output = output_dir;
    const auto started = utc_now();
    try {
        if (!config_path.empty()) {
            ctx.config = read_json_file(config_path);
            ctx.base = fs::path(config_path).parent_path();
            if (ctx.base.empty()) ctx.base = ".";
        }
        ctx.config_hash = fnv1a(ctx.config.dump());
        if (seed) ctx.seed = seed;
        else if (ctx.config.contains("seed")) ctx.seed = ctx.config.at("seed").get<std::uint64_t>();
        fs::create_directories(ctx.output);

        if (ingest->parsed()) cmd_ingest(ctx, ov);
        else if (simulate_data->parsed()) cmd_simulate(ctx);
        else if (learn->parsed()) cmd_learn(ctx, ov);
        else if (score->parsed()) cmd_score(ctx, ov);
        else if (diagnose->parsed()) cmd_diagnose(ctx, ov);
        else if (predict->parsed()) cmd_predict(ctx, ov);
        else if (query->parsed()) cmd_query(ctx, ov);

        Json meta{{"command", ctx.command},
                  {"started_utc", started},
                  {"finished_utc", utc_now()},
                  {"threads", threads},
                  {"config", config_path},
                  {"config_hash", hex64(ctx.config_hash)},
                  {"seed", ctx.seed ? Json(*ctx.seed) : Json(nullptr)},
                  {"artifacts", ctx.artifacts}};
        std::ofstream(ctx.output / (ctx.command + ".meta.json")) << meta.dump(2) << "\n";
    } catch (const Error& e) {
        return report_error(std::string(to_string(e.kind())), e.what(), is_numerical(e.kind()) ? 3 : 2);
    } catch (const Json::exception& e) {
        return report_error("ParseError", e.what(), 2);
    } catch (const fs::filesystem_error& e) {
        return report_error("Io", e.what(), 2);
    } catch (const std::exception& e) {
        return report_error("InvalidArgument", e.what(), 2);
    }
    return 0;
}
