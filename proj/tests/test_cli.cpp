#include <cstdlib>
#include <filesystem>
#include <random>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/QR>

#include <neuroflow/io.hpp>

using namespace neuroflow;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Workspace
{
    fs::path root;

    explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("neuroflow_cli_" + name))
    {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }

    fs::path operator/(const std::string& p) const { return root / p; }
};

int run(const std::string& args, const fs::path& err = {})
{
    std::string cmd = std::string(NEUROFLOW_CLI) + " --workers 1 " + args;
    cmd += err.empty() ? " > /dev/null 2>&1" : " > /dev/null 2> " + err.string();
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

json load(const fs::path& p) { return io::read_json(p); }

// Two nodes, one edge, 10 trials of 20 samples with random data.
SessionDataset pair_session(unsigned seed)
{
    GraphTopology g({{0, 0}, {1, 0}}, {{0, 1}});
    std::mt19937 rng(seed);
    std::normal_distribution<double> nd;
    Block b;
    b.data = Series(200, 2);
    for (index_t r = 0; r < 200; ++r)
        for (index_t c = 0; c < 2; ++c)
            b.data(r, c) = nd(rng);
    for (index_t i = 0; i < 10; ++i)
        b.trials.push_back({i * 20, 20, {2}, 0, {0, 0}, 1, 0.0});
    return SessionDataset{g, {b}, 1000.0, 1000.0};
}

void write_session(const fs::path& dir, const SessionDataset& s)
{
    io::write_files(dir, io::session_files(s, json::object(), nullptr));
}

} // namespace

TEST_CASE("synth writes the session file set")
{
    Workspace ws("synth");
    const auto out = ws / "s";
    REQUIRE(run("synth --out " + out.string() + " --seed 7 --trials 6 --blocks 2 --order 2") == 0);
    for (const char* f : {"topology.json", "block_0.csv", "block_1.csv", "manifest.json", "ground_truth_model.json"})
        CHECK(fs::exists(out / f));
    const json m = load(out / "manifest.json");
    CHECK(m.at("run").at("command") == "synth");
    CHECK(m.at("run").at("seed") == 7);
    CHECK(m.at("blocks").size() == 2);
    CHECK(m.at("blocks")[0].at("trials").size() == 6);
    const auto s = io::read_session(out);
    CHECK(s.topology.node_count() == 100);
    CHECK(s.topology.edge_count() == 342);

    const auto again = ws / "t";
    REQUIRE(run("synth --out " + again.string() + " --seed 7 --trials 6 --blocks 2 --order 2") == 0);
    for (const char* f : {"topology.json", "block_0.csv", "block_1.csv", "ground_truth_model.json"})
        CHECK(io::read_text(out / f) == io::read_text(again / f));
    json a = load(out / "manifest.json"), b = load(again / "manifest.json");
    a["run"].erase("wall_time_s");
    b["run"].erase("wall_time_s");
    CHECK(a == b);

    const auto flat = ws / "u";
    REQUIRE(run("synth --out " + flat.string() + " --coupling 0 --trials 5 --blocks 1 --order 1") == 0);
    const auto truth = io::model_from_json(load(flat / "ground_truth_model.json"));
    CHECK(truth.edge_weights().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("synth reads a config file")
{
    Workspace ws("synth_config");
    io::write_json(ws / "c.json", json{{"rows", 3}, {"cols", 3}, {"trials_per_block", 5}, {"blocks", 1}, {"order", 1}});
    REQUIRE(run("synth --config " + (ws / "c.json").string() + " --out " + (ws / "s").string()) == 0);
    CHECK(io::read_session(ws / "s").topology.node_count() == 9);

    io::write_json(ws / "bad.json", json{{"rows", 3}, {"bogus", 1}});
    CHECK(run("synth --config " + (ws / "bad.json").string() + " --out " + (ws / "b").string(), ws / "err.txt") == 1);
    CHECK_FALSE(fs::exists(ws / "b"));
}

TEST_CASE("fit on a two-node session agrees with a direct least-squares solve")
{
    Workspace ws("fit");
    const auto s = pair_session(3);
    write_session(ws / "s", s);
    REQUIRE(run("fit " + (ws / "s").string() + " --out " + (ws / "m").string() + " --order 1 --no-demean") == 0);

    // training trials 0..7, targets 3..19 of each
    Matrix x(8 * 17 * 2, 3);
    Vector y(x.rows());
    index_t row = 0;
    for (index_t tr = 0; tr < 8; ++tr)
        for (index_t t = 3; t < 20; ++t) {
            const auto prev = s.blocks[0].data.row(tr * 20 + t - 1);
            const double grad = prev[1] - prev[0];
            x.row(row) << prev[0], 0.0, grad;
            y[row++] = s.blocks[0].data(tr * 20 + t, 0);
            x.row(row) << 0.0, prev[1], -grad;
            y[row++] = s.blocks[0].data(tr * 20 + t, 1);
        }
    const Vector theta = x.colPivHouseholderQr().solve(y);
    const auto m = io::model_from_json(load(ws / "m" / "model.json"));
    CHECK(m.memory(1)[0] == Catch::Approx(theta[0]).margin(1e-12));
    CHECK(m.memory(1)[1] == Catch::Approx(theta[1]).margin(1e-12));
    CHECK(m.weights(1)[0] == Catch::Approx(theta[2]).margin(1e-12));
    const json report = load(ws / "m" / "fit_report.json");
    CHECK(report.at("targets") == 8 * 17);
    CHECK(report.at("training_error").get<double>() == Catch::Approx((x * theta - y).squaredNorm()).epsilon(1e-10));
    CHECK(fs::exists(ws / "m" / "manifest.json"));

    REQUIRE(run("fit " + (ws / "s").string() + " --out " + (ws / "n").string() + " --order 2 --no-flow") == 0);
    CHECK(io::model_from_json(load(ws / "n" / "model.json")).edge_weights().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit at high order on a synthetic session")
{
    Workspace ws("fit9");
    REQUIRE(run("synth --out " + (ws / "s").string() + " --trials 10 --blocks 1 --order 3 --seed 2") == 0);
    REQUIRE(run("fit " + (ws / "s").string() + " --out " + (ws / "m").string() + " --order 9") == 0);
    const json report = load(ws / "m" / "fit_report.json");
    CHECK(report.at("order") == 9);
    CHECK(report.at("parameters") == 9 * (100 + 342));
    CHECK(std::isfinite(report.at("training_error").get<double>()));
    CHECK(io::model_from_json(load(ws / "m" / "model.json")).order() == 9);
}

TEST_CASE("eval reports the improvement per order")
{
    Workspace ws("eval");
    REQUIRE(run("synth --out " + (ws / "a").string() + " --trials 10 --blocks 1 --order 2 --seed 4") == 0);
    REQUIRE(run("synth --out " + (ws / "b").string() + " --trials 10 --blocks 1 --order 2 --seed 5") == 0);
    REQUIRE(run("eval " + (ws / "a").string() + " " + (ws / "b").string() + " --orders 1,2 --out " +
                (ws / "e").string()) == 0);
    const json r = load(ws / "e" / "eval_report.json");
    REQUIRE(r.at("orders").size() == 2);
    CHECK(r.at("orders")[1].at("order") == 2);
    CHECK(r.at("orders")[0].at("sessions") == 2);
    CHECK(r.at("sessions").size() == 4);
    for (const char* f : {"improvements.csv", "histogram.csv", "rmse_steps.csv", "manifest.json"})
        CHECK(fs::exists(ws / "e" / f));
    const Series hist = io::series_from_csv(io::read_text(ws / "e" / "histogram.csv"));
    CHECK(hist.rows() == 2 * 10);
    CHECK(hist.col(3).sum() == 4.0);
}

TEST_CASE("eval gives no improvement when the flow term vanishes")
{
    Workspace ws("eval_single");
    // both nodes carry the same signal, so every gradient is zero
    GraphTopology g({{0, 0}, {1, 0}}, {{0, 1}});
    std::mt19937 rng(12);
    std::normal_distribution<double> nd;
    Block b;
    b.data = Series(200, 2);
    for (index_t r = 0; r < 200; ++r)
        b.data.row(r).setConstant(nd(rng));
    for (index_t i = 0; i < 10; ++i)
        b.trials.push_back({i * 20, 20, {2}, 0, {0, 0}, 1, 0.0});
    write_session(ws / "s", SessionDataset{g, {b}, 1000.0, 1000.0});
    REQUIRE(run("eval " + (ws / "s").string() + " --orders 1 --no-demean --out " + (ws / "e").string()) == 0);
    const json r = load(ws / "e" / "eval_report.json");
    CHECK(std::abs(r.at("sessions")[0].at("improvement_percent").get<double>()) < 1e-8);
}

TEST_CASE("decompose writes the decomposition and quiver")
{
    Workspace ws("decompose");
    REQUIRE(run("synth --out " + (ws / "s").string() + " --trials 10 --blocks 1 --order 2 --seed 6") == 0);
    REQUIRE(run("decompose " + (ws / "s").string() + " --model " + (ws / "s" / "ground_truth_model.json").string() +
                " --out " + (ws / "d").string() + " --svg") == 0);
    const json d = load(ws / "d" / "decomposition.json");
    CHECK(d.at("reconstruction_residual").get<double>() < 1e-10);
    CHECK(d.at("rotational_divergence_max").get<double>() < 1e-10);
    CHECK(d.at("eigenvalues").size() == 99);
    CHECK(d.at("f").size() == 342);
    const json q = load(ws / "d" / "quiver.json");
    CHECK(q.at("arrows").size() == 342);
    CHECK(q.at("field") == "gradient_filtered");
    CHECK(io::read_text(ws / "d" / "quiver.svg").find("<svg") == 0);

    REQUIRE(run("synth --out " + (ws / "z").string() + " --trials 5 --blocks 1 --order 1 --coupling 0") == 0);
    REQUIRE(run("decompose " + (ws / "z").string() + " --model " + (ws / "z" / "ground_truth_model.json").string() +
                " --out " + (ws / "dz").string() + " --field flow") == 0);
    const json dz = load(ws / "dz" / "decomposition.json");
    for (const auto& v : dz.at("f"))
        CHECK(v.get<double>() == 0.0);
}

TEST_CASE("broadcast writes one row per session")
{
    Workspace ws("broadcast");
    REQUIRE(run("synth --out " + (ws / "a").string() + " --trials 10 --blocks 1 --order 2 --seed 8") == 0);
    REQUIRE(run("synth --out " + (ws / "b").string() + " --trials 10 --blocks 1 --order 2 --seed 9") == 0);
    REQUIRE(run("broadcast " + (ws / "a").string() + " " + (ws / "b").string() +
                " --model-file ground_truth_model.json --out " + (ws / "o").string()) == 0);
    const Series rows = io::series_from_csv(
        [&] {
            // drop the session name column
            std::string text = io::read_text(ws / "o" / "broadcast.csv"), out;
            std::istringstream in(text);
            std::string line;
            while (std::getline(in, line))
                out += line.substr(line.find(',') + 1) + "\n";
            return out;
        }());
    CHECK(rows.rows() == 2);
    const json summary = load(ws / "o" / "broadcast_summary.json");
    CHECK(summary.at("sessions") == 2);
    CHECK(load(ws / "o" / "broadcast_reports.json").size() == 2);
}

TEST_CASE("errors are reported as JSON without partial output")
{
    Workspace ws("errors");
    const auto err = ws / "err.txt";
    CHECK(run("fit " + (ws / "missing").string() + " --out " + (ws / "o").string(), err) == 1);
    const json e = json::parse(io::read_text(err));
    CHECK(e.at("error").at("command") == "fit");
    CHECK(e.at("error").at("kind").is_string());
    CHECK_FALSE(fs::exists(ws / "o"));

    CHECK(run("fit", err) == 2);
    CHECK(json::parse(io::read_text(err)).at("error").at("kind") == "usage");
    CHECK(run("frobnicate", err) == 2);

    REQUIRE(run("synth --out " + (ws / "s").string() + " --trials 5 --blocks 1 --order 1") == 0);
    CHECK(run("decompose " + (ws / "s").string() + " --model " + (ws / "s" / "ground_truth_model.json").string() +
                  " --out " + (ws / "d").string() + " --cutoff 500",
              err) == 1);
    CHECK(json::parse(io::read_text(err)).at("error").at("kind") == "cutoff");
    CHECK_FALSE(fs::exists(ws / "d"));
    CHECK(run("decompose " + (ws / "s").string() + " --model " + (ws / "s" / "ground_truth_model.json").string() +
                  " --out " + (ws / "d").string() + " --at-ms 5000",
              err) == 1);
    CHECK(json::parse(io::read_text(err)).at("error").at("kind") == "window");

    CHECK(run("--help") == 0);
    CHECK(run("fit --help") == 0);
}
