// Batch front end: synth -> fit -> eval -> decompose -> broadcast.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <neuroflow/broadcaster.hpp>
#include <neuroflow/estimation.hpp>
#include <neuroflow/hodge.hpp>
#include <neuroflow/io.hpp>
#include <neuroflow/pipeline.hpp>
#include <neuroflow/quiver.hpp>
#include <neuroflow/stats.hpp>
#include <neuroflow/synth.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace neuroflow;

namespace {

constexpr const char* kToolVersion = "0.1.0";

using Clock = std::chrono::steady_clock;

json run_manifest(const std::string& command, json config, json inputs, const io::FileSet& outputs,
                  std::optional<std::uint64_t> seed, Clock::time_point start)
{
    json outs = json::array();
    for (const auto& f : outputs)
        outs.push_back(f.first);
    json m = {{"command", command},
              {"config", std::move(config)},
              {"inputs", std::move(inputs)},
              {"outputs", std::move(outs)},
              {"tool_version", kToolVersion},
              {"wall_time_s", std::chrono::duration<double>(Clock::now() - start).count()}};
    m["seed"] = seed ? json(*seed) : json(nullptr);
    return m;
}

void finish(const fs::path& out, io::FileSet files, const std::string& command, json config, json inputs,
            std::optional<std::uint64_t> seed, Clock::time_point start)
{
    json manifest = run_manifest(command, std::move(config), std::move(inputs), files, seed, start);
    files.emplace_back("manifest.json", manifest.dump(2) + "\n");
    io::write_files(out, files);
}

std::string csv_line(std::initializer_list<std::string> cells)
{
    std::string s;
    bool first = true;
    for (const auto& c : cells) {
        if (!first)
            s += ',';
        s += c;
        first = false;
    }
    return s + '\n';
}

std::string num(double v)
{
    std::string s;
    io::append_number(s, v);
    return s;
}

std::string session_name(const fs::path& dir)
{
    const fs::path p = dir.has_filename() ? dir : dir.parent_path();
    return p.filename().string();
}

// ------------------------------------------------------------------ synth

struct SynthArgs
{
    std::string config_file;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<double> coupling;
    std::optional<index_t> stim_node;
    std::optional<index_t> trials;
    std::optional<index_t> blocks;
    std::optional<index_t> order;
};

void cmd_synth(const SynthArgs& a, unsigned workers)
{
    const auto start = Clock::now();
    SynthConfig c;
    if (!a.config_file.empty())
        c = io::synth_config_from_json(io::read_json(a.config_file));
    if (a.seed)
        c.seed = *a.seed;
    if (a.coupling)
        c.coupling_scale = *a.coupling;
    if (a.stim_node)
        c.stim_node = *a.stim_node;
    if (a.trials)
        c.trials_per_block = *a.trials;
    if (a.blocks)
        c.blocks = *a.blocks;
    if (a.order)
        c.order = *a.order;
    c.validate();

    const SyntheticSession s = generate_session(c, workers);
    json inputs = json::array();
    if (!a.config_file.empty())
        inputs.push_back(a.config_file);
    io::FileSet files = io::session_files(s.dataset, json::object(), &s.truth);
    // the session manifest doubles as the run manifest of this directory
    json names = json::array();
    for (const auto& f : files)
        names.push_back(f.first);
    for (auto& [name, text] : files) {
        if (name != "manifest.json")
            continue;
        json m = json::parse(text);
        m["run"] = {{"command", "synth"},
                    {"config", io::synth_config_json(c)},
                    {"inputs", inputs},
                    {"outputs", names},
                    {"seed", c.seed},
                    {"tool_version", kToolVersion},
                    {"wall_time_s", std::chrono::duration<double>(Clock::now() - start).count()}};
        text = m.dump(2) + "\n";
    }
    io::write_files(a.out, files);
}

// -------------------------------------------------------------------- fit

struct FitArgs
{
    std::string session;
    std::string out;
    index_t order = 5;
    bool no_flow = false;
    double ridge = 0.0;
    bool no_demean = false;
    bool no_min_norm = false;
    index_t knn = 8;
};

void cmd_fit(const FitArgs& a, unsigned workers)
{
    const auto start = Clock::now();
    const SessionDataset s = io::read_session(a.session, a.knn);
    FitConfig fc;
    fc.order = a.order;
    fc.ridge = a.ridge;
    fc.demean = !a.no_demean;
    fc.min_norm_fallback = !a.no_min_norm;
    fc.workers = workers;

    const PreparedSession prep = prepare_session(s, fc.demean);
    const TrainTestSplit split = split_train_test(prep);
    const auto targets = target_indices(prep, split.train, fc.order);
    const DiffusionModel model = a.no_flow ? fit_no_flow(s.topology, prep.segments, targets, fc)
                                           : fit(s.topology, prep.segments, targets, fc);
    const double e = training_error(model, s.topology, prep.segments, targets);

    json report = {{"order", fc.order},
                   {"no_flow", a.no_flow},
                   {"ridge", fc.ridge},
                   {"demean", fc.demean},
                   {"training_error", e},
                   {"targets", targets.size()},
                   {"equations", static_cast<index_t>(targets.size()) * s.topology.node_count()},
                   {"parameters", fc.order * (s.topology.node_count() + s.topology.edge_count())},
                   {"train_trials", split.train.size()},
                   {"nodes", s.topology.node_count()},
                   {"edges", s.topology.edge_count()}};
    io::FileSet files{{"model.json", io::model_to_json(model).dump(2) + "\n"}, {"fit_report.json", report.dump(2) + "\n"}};
    json config = {{"order", fc.order}, {"no_flow", a.no_flow}, {"ridge", fc.ridge}, {"demean", fc.demean},
                   {"min_norm_fallback", fc.min_norm_fallback}, {"knn", a.knn}};
    finish(a.out, std::move(files), "fit", std::move(config), json::array({a.session}), std::nullopt, start);
}

// ------------------------------------------------------------------- eval

struct EvalArgs
{
    std::vector<std::string> sessions;
    std::string out;
    std::vector<index_t> orders{1, 5, 9};
    index_t bins = 10;
    double ridge = 0.0;
    bool no_demean = false;
    index_t knn = 8;
};

void cmd_eval(const EvalArgs& a, unsigned workers)
{
    const auto start = Clock::now();
    if (a.sessions.empty())
        throw Error("empty", "no sessions given");
    if (a.bins < 1)
        throw Error("config", "bins must be positive");
    std::vector<SessionDataset> sessions;
    for (const auto& dir : a.sessions)
        sessions.push_back(io::read_session(dir, a.knn));

    const std::size_t jobs = sessions.size() * a.orders.size();
    std::vector<SessionEvaluation> results(jobs);
    parallel_for(jobs, workers, [&](std::size_t j) {
        FitConfig fc;
        fc.order = a.orders[j % a.orders.size()];
        fc.ridge = a.ridge;
        fc.demean = !a.no_demean;
        results[j] = evaluate_session(sessions[j / a.orders.size()], fc);
    });

    std::string improvements = csv_line({"session", "order", "improvement_percent", "excluded_steps"});
    std::string steps = csv_line({"session", "order", "step", "rmse_no_flow", "rmse_flow"});
    std::string histogram = csv_line({"order", "bin_lo", "bin_hi", "count"});
    json per_order = json::array();
    json per_session = json::array();
    for (std::size_t oi = 0; oi < a.orders.size(); ++oi) {
        std::vector<double> values;
        for (std::size_t si = 0; si < sessions.size(); ++si) {
            const auto& r = results[si * a.orders.size() + oi];
            const std::string name = session_name(a.sessions[si]);
            values.push_back(r.improvement.percent);
            improvements += csv_line({name, std::to_string(r.order), num(r.improvement.percent),
                                      std::to_string(r.improvement.excluded_steps)});
            for (index_t t = 0; t < r.rmse_flow.size(); ++t)
                steps += csv_line({name, std::to_string(r.order), std::to_string(t), num(r.rmse_no_flow[t]),
                                   num(r.rmse_flow[t])});
            if (r.improvement.excluded_steps > 0)
                std::cerr << "warning: " << name << " K=" << r.order << ": " << r.improvement.excluded_steps
                          << " steps with zero no-flow RMSE excluded\n";
            per_session.push_back({{"session", name},
                                   {"order", r.order},
                                   {"improvement_percent", r.improvement.percent},
                                   {"excluded_steps", r.improvement.excluded_steps},
                                   {"test_steps", r.rmse_flow.size()},
                                   {"train_error_flow", r.train_error_flow},
                                   {"train_error_no_flow", r.train_error_no_flow}});
        }
        const ImprovementSummary sum = summarize_improvements(values);
        json entry = {{"order", a.orders[oi]},
                      {"mean_improvement_percent", sum.mean},
                      {"sessions", sum.sessions},
                      {"positive_sessions", sum.positive}};
        entry["t"] = sum.test ? json(sum.test->t) : json(nullptr);
        entry["p"] = sum.test ? json(sum.test->p) : json(nullptr);
        per_order.push_back(std::move(entry));

        const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
        double lo = *lo_it, hi = *hi_it;
        if (hi <= lo) {
            lo -= 0.5;
            hi += 0.5;
        }
        std::vector<index_t> counts(static_cast<std::size_t>(a.bins), 0);
        for (double v : values) {
            auto b = static_cast<index_t>((v - lo) / (hi - lo) * static_cast<double>(a.bins));
            counts[static_cast<std::size_t>(std::clamp<index_t>(b, 0, a.bins - 1))]++;
        }
        for (index_t b = 0; b < a.bins; ++b) {
            const double w = (hi - lo) / static_cast<double>(a.bins);
            histogram += csv_line({std::to_string(a.orders[oi]), num(lo + w * static_cast<double>(b)),
                                   num(lo + w * static_cast<double>(b + 1)),
                                   std::to_string(counts[static_cast<std::size_t>(b)])});
        }
    }
    json report = {{"orders", per_order}, {"sessions", per_session}};
    io::FileSet files{{"eval_report.json", report.dump(2) + "\n"},
                      {"improvements.csv", improvements},
                      {"histogram.csv", histogram},
                      {"rmse_steps.csv", steps}};
    json config = {{"orders", a.orders}, {"bins", a.bins}, {"ridge", a.ridge}, {"demean", !a.no_demean}, {"knn", a.knn}};
    finish(a.out, std::move(files), "eval", std::move(config), a.sessions, std::nullopt, start);
}

// -------------------------------------------------------------- decompose

struct FilterArgs
{
    index_t cutoff = 14;
    std::optional<double> cutoff_lambda;
    int filter_order = 2;

    GradientFilter filter() const
    {
        if (cutoff_lambda)
            return SmoothCutoff{*cutoff_lambda, filter_order};
        return IdealCutoff{cutoff};
    }

    json to_json() const
    {
        if (cutoff_lambda)
            return {{"type", "smooth"}, {"lambda_c", *cutoff_lambda}, {"order", filter_order}};
        return {{"type", "ideal"}, {"index", cutoff}};
    }
};

struct DecomposeArgs
{
    std::string session;
    std::string model;
    std::string out;
    double at_ms = 10.0;
    FilterArgs filter;
    bool svg = false;
    std::string field = "gradient_filtered";
    index_t knn = 8;
};

void cmd_decompose(const DecomposeArgs& a, unsigned)
{
    const auto start = Clock::now();
    const SessionDataset s = io::read_session(a.session, a.knn);
    const DiffusionModel model = io::model_from_json(io::read_json(a.model));
    model.check_against(s.topology);
    const GradientModeBasis basis(s.topology);
    const Vector f = trial_average_flow(s, model, a.at_ms);
    const HodgeDecomposition d = hodge_decompose(s.topology, basis, f);
    const Vector smooth = lowpass_gradient(d, basis, a.filter.filter());

    const double fn = f.norm();
    const double residual = fn > 0.0 ? (f - d.gradient_part - d.rotational_part).norm() / fn : 0.0;
    const double div_rot = divergence(s.topology, d.rotational_part).cwiseAbs().maxCoeff();

    json dj = {{"at_ms", a.at_ms},
               {"sample_offset", s.ms_to_samples(a.at_ms)},
               {"filter", a.filter.to_json()},
               {"f", io::vector_json(f)},
               {"f_grad", io::vector_json(d.gradient_part)},
               {"f_rot", io::vector_json(d.rotational_part)},
               {"f_grad_filtered", io::vector_json(smooth)},
               {"coefficients", io::vector_json(d.coefficients)},
               {"eigenvalues", io::vector_json(basis.eigenvalues())},
               {"potential", io::vector_json(reconstruct_potential(d))},
               {"reconstruction_residual", residual},
               {"rotational_divergence_max", div_rot},
               {"stimulation", io::point_json(first_stimulation_site(s))}};

    const Vector* field = nullptr;
    if (a.field == "flow")
        field = &f;
    else if (a.field == "gradient")
        field = &d.gradient_part;
    else if (a.field == "rotational")
        field = &d.rotational_part;
    else if (a.field == "gradient_filtered")
        field = &smooth;
    else
        throw Error("config", "unknown quiver field '" + a.field + "'");

    const Point2 x_s = first_stimulation_site(s);
    const json quiver = quiver_json(s.topology, *field, x_s, a.field, a.at_ms);
    io::FileSet files{{"decomposition.json", dj.dump(2) + "\n"}, {"quiver.json", quiver.dump(2) + "\n"}};
    if (a.svg)
        files.emplace_back("quiver.svg", quiver_svg(s.topology, *field, x_s));
    json config = {{"at_ms", a.at_ms}, {"filter", a.filter.to_json()}, {"field", a.field}, {"svg", a.svg}, {"knn", a.knn}};
    finish(a.out, std::move(files), "decompose", std::move(config), json::array({a.session, a.model}), std::nullopt,
           start);
}

// -------------------------------------------------------------- broadcast

struct BroadcastArgs
{
    std::vector<std::string> sessions;
    std::string out;
    double at_ms = 10.0;
    index_t order = 5;
    std::string model_file;
    FilterArgs filter;
    index_t knn = 8;
};

void cmd_broadcast(const BroadcastArgs& a, unsigned workers)
{
    const auto start = Clock::now();
    if (a.sessions.empty())
        throw Error("empty", "no sessions given");
    std::vector<SessionDataset> sessions;
    std::vector<std::optional<DiffusionModel>> models;
    for (const auto& dir : a.sessions) {
        sessions.push_back(io::read_session(dir, a.knn));
        if (!a.model_file.empty())
            models.emplace_back(io::model_from_json(io::read_json(fs::path(dir) / a.model_file)));
        else
            models.emplace_back();
    }
    std::vector<BroadcastReport> reports(sessions.size());
    parallel_for(sessions.size(), workers, [&](std::size_t i) {
        const auto& s = sessions[i];
        DiffusionModel m;
        if (models[i]) {
            m = *models[i];
        } else {
            FitConfig fc;
            fc.order = a.order;
            m = fit_session_model(s, fc);
        }
        reports[i] = broadcast_session(s, m, a.at_ms, a.filter.filter(), GradientModeBasis(s.topology));
    });

    json arr = json::array();
    std::string csv = csv_line({"session", "d_b", "d_r", "x_b", "y_b", "x_s", "y_s"});
    std::vector<double> db, dr;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        const std::string name = session_name(a.sessions[i]);
        json j = io::broadcast_report_json(r);
        j["session"] = name;
        arr.push_back(std::move(j));
        csv += csv_line({name, num(r.d_b), num(r.d_r), num(r.x_b.x), num(r.x_b.y), num(r.x_s.x), num(r.x_s.y)});
        db.push_back(r.d_b);
        dr.push_back(r.d_r);
    }
    json summary = {{"sessions", reports.size()},
                    {"mean_d_b", std::accumulate(db.begin(), db.end(), 0.0) / static_cast<double>(db.size())},
                    {"mean_d_r", std::accumulate(dr.begin(), dr.end(), 0.0) / static_cast<double>(dr.size())},
                    {"sessions_closer", std::inner_product(db.begin(), db.end(), dr.begin(), 0, std::plus<>(),
                                                           [](double b, double r) { return b < r ? 1 : 0; })}};
    summary["paired_t"] = nullptr;
    summary["paired_p"] = nullptr;
    if (db.size() >= 2) {
        try {
            const TTest t = t_test_paired(db, dr);
            summary["paired_t"] = t.t;
            summary["paired_p"] = t.p;
        } catch (const Error&) {
            // zero variance of differences: test undefined
        }
    }
    io::FileSet files{{"broadcast_reports.json", arr.dump(2) + "\n"},
                      {"broadcast.csv", csv},
                      {"broadcast_summary.json", summary.dump(2) + "\n"}};
    json config = {{"at_ms", a.at_ms}, {"order", a.order}, {"model_file", a.model_file},
                   {"filter", a.filter.to_json()}, {"knn", a.knn}};
    finish(a.out, std::move(files), "broadcast", std::move(config), a.sessions, std::nullopt, start);
}

void error_json(const std::string& command, const std::string& kind, const std::string& message)
{
    json e = {{"error", {{"command", command}, {"kind", kind}, {"message", message}}}};
    std::cerr << e.dump() << std::endl;
}

void add_filter_options(CLI::App* sub, FilterArgs& f)
{
    sub->add_option("--cutoff", f.cutoff, "Ideal low-pass: keep the lowest C gradient modes")->capture_default_str();
    sub->add_option("--cutoff-lambda", f.cutoff_lambda, "Smooth low-pass with -3 dB point at this eigenvalue");
    sub->add_option("--filter-order", f.filter_order, "Order p of the smooth low-pass")->capture_default_str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Edge-flow estimation and analysis for sensor-graph time series"};
    app.require_subcommand(1);
    unsigned workers = 0;
    app.add_option("--workers", workers, "Worker threads (default: $NEUROFLOW_WORKERS or hardware concurrency)");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic stimulation session");
    synth->add_option("--config", sa.config_file, "Synth config JSON (missing keys use defaults)");
    synth->add_option("--out", sa.out, "Output session directory")->required();
    synth->add_option("--seed", sa.seed, "Random seed");
    synth->add_option("--coupling", sa.coupling, "Coupling scale of the ground-truth model");
    synth->add_option("--stim-node", sa.stim_node, "First-laser stimulation node");
    synth->add_option("--trials", sa.trials, "Trials per block");
    synth->add_option("--blocks", sa.blocks, "Blocks per session");
    synth->add_option("--order", sa.order, "Ground-truth model order");

    FitArgs fa;
    auto* fitc = app.add_subcommand("fit", "Fit a diffusion model on the training trials of a session");
    fitc->add_option("session", fa.session, "Session directory")->required();
    fitc->add_option("--out", fa.out, "Output directory")->required();
    fitc->add_option("--order", fa.order, "Model order K")->capture_default_str();
    fitc->add_flag("--no-flow", fa.no_flow, "Constrain all edge weights to zero");
    fitc->add_option("--ridge", fa.ridge, "Ridge penalty")->capture_default_str();
    fitc->add_flag("--no-demean", fa.no_demean, "Fit on raw signals");
    fitc->add_flag("--no-min-norm", fa.no_min_norm, "Fail instead of returning the minimum-norm solution");
    fitc->add_option("--knn", fa.knn, "k for topologies without edges")->capture_default_str();

    EvalArgs ea;
    auto* evalc = app.add_subcommand("eval", "Compare flow and no-flow predictions per session");
    evalc->add_option("sessions", ea.sessions, "Session directories")->required();
    evalc->add_option("--out", ea.out, "Output directory")->required();
    evalc->add_option("--orders", ea.orders, "Model orders")->delimiter(',')->capture_default_str();
    evalc->add_option("--bins", ea.bins, "Histogram bins")->capture_default_str();
    evalc->add_option("--ridge", ea.ridge, "Ridge penalty")->capture_default_str();
    evalc->add_flag("--no-demean", ea.no_demean, "Fit on raw signals");
    evalc->add_option("--knn", ea.knn, "k for topologies without edges")->capture_default_str();

    DecomposeArgs da;
    auto* dec = app.add_subcommand("decompose", "Hodge-decompose the trial-averaged flow at a time point");
    dec->add_option("session", da.session, "Session directory")->required();
    dec->add_option("--model", da.model, "Model JSON")->required();
    dec->add_option("--out", da.out, "Output directory")->required();
    dec->add_option("--at-ms", da.at_ms, "Time after the first laser (ms)")->capture_default_str();
    add_filter_options(dec, da.filter);
    dec->add_flag("--svg", da.svg, "Also render quiver.svg");
    dec->add_option("--field", da.field, "Quiver field: flow, gradient, gradient_filtered, rotational")
        ->capture_default_str();
    dec->add_option("--knn", da.knn, "k for topologies without edges")->capture_default_str();

    BroadcastArgs ba;
    auto* bc = app.add_subcommand("broadcast", "Localize the global broadcaster per session");
    bc->add_option("sessions", ba.sessions, "Session directories")->required();
    bc->add_option("--out", ba.out, "Output directory")->required();
    bc->add_option("--at-ms", ba.at_ms, "Time after the first laser (ms)")->capture_default_str();
    bc->add_option("--order", ba.order, "Model order when fitting")->capture_default_str();
    bc->add_option("--model-file", ba.model_file, "Model JSON inside each session directory (skips fitting)");
    add_filter_options(bc, ba.filter);
    bc->add_option("--knn", ba.knn, "k for topologies without edges")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        error_json("", "usage", e.what());
        return 2;
    }

    if (workers == 0)
        workers = default_workers();

    std::string command = app.get_subcommands().front()->get_name();
    try {
        if (command == "synth")
            cmd_synth(sa, workers);
        else if (command == "fit")
            cmd_fit(fa, workers);
        else if (command == "eval")
            cmd_eval(ea, workers);
        else if (command == "decompose")
            cmd_decompose(da, workers);
        else if (command == "broadcast")
            cmd_broadcast(ba, workers);
    } catch (const Error& e) {
        error_json(command, e.kind(), e.what());
        return 1;
    } catch (const std::exception& e) {
        error_json(command, "internal", e.what());
        return 1;
    }
    return 0;
}
