#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "broadcaster.hpp"
#include "common.hpp"
#include "diffusion_model.hpp"
#include "graph_topology.hpp"
#include "session.hpp"
#include "synth.hpp"

namespace neuroflow::io {

using nlohmann::json;
namespace fs = std::filesystem;

inline json vector_json(const Eigen::Ref<const Vector>& v)
{
    json a = json::array();
    for (index_t i = 0; i < v.size(); ++i)
        a.push_back(v[i]);
    return a;
}

inline Vector vector_from_json(const json& a, std::string_view what)
{
    if (!a.is_array())
        throw Error("format", std::string(what) + " must be an array");
    Vector v(static_cast<index_t>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number())
            throw Error("format", std::string(what) + " must contain numbers");
        v[static_cast<index_t>(i)] = a[i].get<double>();
    }
    return v;
}

inline json point_json(const Point2& p) { return json::array({p.x, p.y}); }

inline Point2 point_from_json(const json& a)
{
    if (!a.is_array() || a.size() != 2)
        throw Error("format", "coordinate must be [x, y]");
    return {a[0].get<double>(), a[1].get<double>()};
}

inline std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("io", "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline json read_json(const fs::path& path)
{
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw Error("format", path.string() + ": " + e.what());
    }
}

inline void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("io", "cannot write " + path.string());
    out << text;
    if (!out)
        throw Error("io", "write failed for " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Shortest representation that round-trips.
inline void append_number(std::string& out, double v)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

// ---------------------------------------------------------------- topology

inline json topology_to_json(const GraphTopology& g)
{
    json nodes = json::array();
    for (index_t n = 0; n < g.node_count(); ++n)
        nodes.push_back({{"id", n}, {"x", g.location(n).x}, {"y", g.location(n).y}});
    json edges = json::array();
    for (const auto& e : g.edges())
        edges.push_back({{"tail", e.tail}, {"head", e.head}});
    return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

/// Reads a topology; without an "edges" key the graph is built by k-NN.
inline GraphTopology topology_from_json(const json& j, index_t knn = 8)
{
    try {
        const auto& nodes = j.at("nodes");
        std::vector<Point2> locs(nodes.size());
        std::vector<bool> seen(nodes.size(), false);
        for (const auto& nd : nodes) {
            const auto id = nd.at("id").get<index_t>();
            if (id < 0 || id >= static_cast<index_t>(nodes.size()) || seen[static_cast<std::size_t>(id)])
                throw Error("topology", "node ids must be 0..N-1 without repeats");
            seen[static_cast<std::size_t>(id)] = true;
            locs[static_cast<std::size_t>(id)] = {nd.at("x").get<double>(), nd.at("y").get<double>()};
        }
        if (!j.contains("edges"))
            return build_knn_graph(locs, knn);
        std::vector<Edge> edges;
        for (const auto& e : j.at("edges"))
            edges.push_back({e.at("tail").get<index_t>(), e.at("head").get<index_t>()});
        return GraphTopology(std::move(locs), std::move(edges));
    } catch (const json::exception& e) {
        throw Error("format", std::string("topology JSON: ") + e.what());
    }
}

// ------------------------------------------------------------------- model

inline json model_to_json(const DiffusionModel& m)
{
    json mem = json::array(), w = json::array();
    for (index_t k = 1; k <= m.order(); ++k) {
        mem.push_back(vector_json(m.memory(k)));
        w.push_back(vector_json(m.weights(k)));
    }
    return {{"K", m.order()}, {"node_memory", std::move(mem)}, {"edge_weights", std::move(w)}};
}

inline DiffusionModel model_from_json(const json& j)
{
    try {
        const auto order = j.at("K").get<index_t>();
        const auto& mem = j.at("node_memory");
        const auto& w = j.at("edge_weights");
        if (order < 1 || static_cast<index_t>(mem.size()) != order || static_cast<index_t>(w.size()) != order)
            throw Error("format", "model JSON needs K lag vectors in node_memory and edge_weights");
        const auto n = static_cast<index_t>(mem[0].size());
        const auto e = static_cast<index_t>(w[0].size());
        DiffusionModel model = DiffusionModel::zeros(n, e, order);
        for (index_t k = 1; k <= order; ++k) {
            const Vector mk = vector_from_json(mem[static_cast<std::size_t>(k - 1)], "node_memory");
            const Vector wk = vector_from_json(w[static_cast<std::size_t>(k - 1)], "edge_weights");
            require_length(mk.size(), n, "node_memory lag");
            require_length(wk.size(), e, "edge_weights lag");
            model.memory(k) = mk;
            model.weights(k) = wk;
        }
        return model;
    } catch (const json::exception& ex) {
        throw Error("format", std::string("model JSON: ") + ex.what());
    }
}

// --------------------------------------------------------------------- CSV

inline std::string series_to_csv(const Series& s)
{
    std::string out;
    out.reserve(static_cast<std::size_t>(s.size()) * 20 + 16);
    for (index_t c = 0; c < s.cols(); ++c) {
        out += c ? ",ch" : "ch";
        out += std::to_string(c);
    }
    out += '\n';
    for (index_t r = 0; r < s.rows(); ++r) {
        for (index_t c = 0; c < s.cols(); ++c) {
            if (c)
                out += ',';
            append_number(out, s(r, c));
        }
        out += '\n';
    }
    return out;
}

/// Rows = samples, columns = channels; an optional non-numeric header line is skipped.
inline Series series_from_csv(const std::string& text, std::string_view what = "CSV")
{
    std::vector<double> values;
    index_t cols = -1, rows = 0;
    std::size_t pos = 0;
    bool first_line = true;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos)
            end = text.size();
        std::string_view line(text.data() + pos, end - pos);
        pos = end + 1;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (line.empty())
            continue;
        if (first_line) {
            first_line = false;
            const char c0 = line.front();
            if (!(std::isdigit(static_cast<unsigned char>(c0)) || c0 == '-' || c0 == '+' || c0 == '.'))
                continue;
        }
        index_t count = 0;
        std::size_t p = 0;
        while (p <= line.size()) {
            std::size_t q = line.find(',', p);
            if (q == std::string_view::npos)
                q = line.size();
            double v = 0.0;
            const char* b = line.data() + p;
            while (b < line.data() + q && *b == ' ')
                ++b;
            const auto res = std::from_chars(b, line.data() + q, v);
            if (res.ec != std::errc())
                throw Error("format", std::string(what) + ": bad number on data row " + std::to_string(rows + 1));
            values.push_back(v);
            ++count;
            p = q + 1;
        }
        if (cols < 0)
            cols = count;
        else if (count != cols)
            throw Error("format", std::string(what) + ": ragged row " + std::to_string(rows + 1));
        ++rows;
    }
    if (rows == 0)
        throw Error("format", std::string(what) + ": no data rows");
    return Eigen::Map<const Series>(values.data(), rows, cols);
}

// ----------------------------------------------------------------- session

inline json session_manifest_json(const SessionDataset& s)
{
    json blocks = json::array();
    for (std::size_t b = 0; b < s.blocks.size(); ++b) {
        json trials = json::array();
        for (const Trial& t : s.blocks[b].trials)
            trials.push_back({{"start", t.start},
                              {"length", t.length},
                              {"stim_offsets", t.stim_offsets},
                              {"stim_node", t.stim_node},
                              {"x_s", point_json(t.stim_location)},
                              {"laser_count", t.laser_count},
                              {"delay_ms", t.delay_ms}});
        blocks.push_back({{"file", "block_" + std::to_string(b) + ".csv"},
                          {"rows", s.blocks[b].data.rows()},
                          {"trials", std::move(trials)}});
    }
    return {{"format", "neuroflow-session"},
            {"version", 1},
            {"sampling_rate_hz", s.sampling_rate_hz},
            {"fit_window_ms", s.fit_window_ms},
            {"channels", s.topology.node_count()},
            {"blocks", std::move(blocks)}};
}

/// Serialized session file set: file name -> contents.
using FileSet = std::vector<std::pair<std::string, std::string>>;

inline FileSet session_files(const SessionDataset& s, const json& run, const DiffusionModel* truth)
{
    FileSet files;
    files.emplace_back("topology.json", topology_to_json(s.topology).dump(2) + "\n");
    for (std::size_t b = 0; b < s.blocks.size(); ++b)
        files.emplace_back("block_" + std::to_string(b) + ".csv", series_to_csv(s.blocks[b].data));
    json manifest = session_manifest_json(s);
    manifest["run"] = run;
    files.emplace_back("manifest.json", manifest.dump(2) + "\n");
    if (truth)
        files.emplace_back("ground_truth_model.json", model_to_json(*truth).dump(2) + "\n");
    return files;
}

inline void write_files(const fs::path& dir, const FileSet& files)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error("io", "cannot create " + dir.string() + ": " + ec.message());
    for (const auto& [name, text] : files)
        write_text(dir / name, text);
}

inline SessionDataset read_session(const fs::path& dir, index_t knn = 8)
{
    GraphTopology topo = topology_from_json(read_json(dir / "topology.json"), knn);
    const json m = read_json(dir / "manifest.json");
    try {
        SessionDataset s{std::move(topo), {}, m.at("sampling_rate_hz").get<double>(),
                         m.value("fit_window_ms", 30.0)};
        for (const auto& bj : m.at("blocks")) {
            Block b;
            const auto file = bj.at("file").get<std::string>();
            b.data = series_from_csv(read_text(dir / file), file);
            for (const auto& tj : bj.at("trials")) {
                Trial t;
                t.start = tj.at("start").get<index_t>();
                t.length = tj.at("length").get<index_t>();
                t.stim_offsets = tj.at("stim_offsets").get<std::vector<index_t>>();
                t.stim_node = tj.value("stim_node", index_t{-1});
                t.stim_location = point_from_json(tj.at("x_s"));
                t.laser_count = tj.value("laser_count", 1);
                t.delay_ms = tj.value("delay_ms", 0.0);
                b.trials.push_back(std::move(t));
            }
            s.blocks.push_back(std::move(b));
        }
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw Error("format", dir.string() + "/manifest.json: " + e.what());
    }
}

// ------------------------------------------------------------ synth config

inline json synth_config_json(const SynthConfig& c)
{
    return {{"rows", c.rows},
            {"cols", c.cols},
            {"knn", c.knn},
            {"order", c.order},
            {"stim_node", c.stim_node},
            {"second_stim_node", c.second_stim_node},
            {"laser_count", c.laser_count},
            {"rate_hz", c.rate_hz},
            {"delay_ms", c.delay_ms},
            {"trials_per_block", c.trials_per_block},
            {"blocks", c.blocks},
            {"sampling_rate_hz", c.sampling_rate_hz},
            {"fit_window_ms", c.fit_window_ms},
            {"prestim_samples", c.prestim_samples},
            {"noise_std", c.noise_std},
            {"background_std", c.background_std},
            {"stim_amplitude", c.stim_amplitude},
            {"coupling_scale", c.coupling_scale},
            {"strict_protocol", c.strict_protocol},
            {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline SynthConfig synth_config_from_json(const json& j)
{
    SynthConfig c;
    const json known = synth_config_json(c);
    for (const auto& [key, _] : j.items())
        if (!known.contains(key))
            throw Error("config", "unknown synth config key '" + key + "'");
    try {
        c.rows = j.value("rows", c.rows);
        c.cols = j.value("cols", c.cols);
        c.knn = j.value("knn", c.knn);
        c.order = j.value("order", c.order);
        c.stim_node = j.value("stim_node", c.stim_node);
        c.second_stim_node = j.value("second_stim_node", c.second_stim_node);
        c.laser_count = j.value("laser_count", c.laser_count);
        c.rate_hz = j.value("rate_hz", c.rate_hz);
        c.delay_ms = j.value("delay_ms", c.delay_ms);
        c.trials_per_block = j.value("trials_per_block", c.trials_per_block);
        c.blocks = j.value("blocks", c.blocks);
        c.sampling_rate_hz = j.value("sampling_rate_hz", c.sampling_rate_hz);
        c.fit_window_ms = j.value("fit_window_ms", c.fit_window_ms);
        c.prestim_samples = j.value("prestim_samples", c.prestim_samples);
        c.noise_std = j.value("noise_std", c.noise_std);
        c.background_std = j.value("background_std", c.background_std);
        c.stim_amplitude = j.value("stim_amplitude", c.stim_amplitude);
        c.coupling_scale = j.value("coupling_scale", c.coupling_scale);
        c.strict_protocol = j.value("strict_protocol", c.strict_protocol);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw Error("config", std::string("synth config: ") + e.what());
    }
    c.validate();
    return c;
}

// ----------------------------------------------------------------- reports

inline json broadcast_report_json(const BroadcastReport& r)
{
    return {{"adr", vector_json(r.adr)}, {"x_b", point_json(r.x_b)}, {"x_s", point_json(r.x_s)}, {"d_b", r.d_b},
            {"d_r", r.d_r}};
}

} // namespace neuroflow::io
