#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "common.hpp"
#include "diffusion_model.hpp"
#include "graph_topology.hpp"
#include "random.hpp"
#include "session.hpp"

namespace neuroflow {

/// Parameters of a synthetic stimulation session.
struct SynthConfig
{
    index_t rows = 10;
    index_t cols = 10;
    index_t knn = 0; ///< 0: 8-neighborhood grid; k > 0: k-NN graph on the grid points
    index_t order = 3;
    index_t stim_node = -1;        ///< first laser; -1 draws one from the seed
    index_t second_stim_node = -1; ///< second laser; -1 draws one from the seed
    int laser_count = 1;
    double rate_hz = 5.0;
    double delay_ms = 10.0; ///< inter-laser delay
    index_t trials_per_block = 100;
    index_t blocks = 2;
    double sampling_rate_hz = 1000.0;
    double fit_window_ms = 30.0;
    index_t prestim_samples = 10; ///< baseline rows before the first laser
    double noise_std = 1.0;
    double background_std = 1.0; ///< spread of the random pre-trial state
    double stim_amplitude = -1.0; ///< < 0: 10 x noise_std (10 when noiseless)
    double coupling_scale = 0.2;
    bool strict_protocol = true; ///< restrict rate to {5, 7} Hz, delay to {10, 30, 70, 100} ms
    std::uint64_t seed = 1;

    double amplitude() const
    {
        if (stim_amplitude >= 0.0)
            return stim_amplitude;
        return noise_std > 0.0 ? 10.0 * noise_std : 10.0;
    }

    index_t trial_length() const { return static_cast<index_t>(std::lround(sampling_rate_hz / rate_hz)); }

    void validate() const
    {
        if (rows < 1 || cols < 1 || rows * cols < 2)
            throw Error("config", "grid needs at least 2 nodes");
        if (knn < 0)
            throw Error("config", "knn must be nonnegative");
        if (order < 1)
            throw Error("config", "order must be positive");
        if (laser_count != 1 && laser_count != 2)
            throw Error("config", "laser_count must be 1 or 2");
        if (!(rate_hz > 0.0) || !(sampling_rate_hz > 0.0))
            throw Error("config", "rates must be positive");
        if (strict_protocol) {
            if (rate_hz != 5.0 && rate_hz != 7.0)
                throw Error("config", "stimulation rate must be 5 or 7 Hz");
            if (laser_count == 2 && delay_ms != 10.0 && delay_ms != 30.0 && delay_ms != 70.0 && delay_ms != 100.0)
                throw Error("config", "inter-laser delay must be 10, 30, 70 or 100 ms");
        }
        if (trials_per_block < 1 || blocks < 1)
            throw Error("config", "need at least one block and one trial");
        if (prestim_samples < order)
            throw Error("config", "prestim_samples must be at least the model order");
        if (noise_std < 0.0 || background_std < 0.0 || coupling_scale < 0.0 || fit_window_ms < 0.0)
            throw Error("config", "noise, background, coupling and window must be nonnegative");
        const index_t n = rows * cols;
        if (stim_node >= n || second_stim_node >= n)
            throw Error("config", "stimulation node out of range");
        const index_t delay = static_cast<index_t>(std::lround(delay_ms * sampling_rate_hz / 1000.0));
        const index_t last = prestim_samples + (laser_count == 2 ? delay : 0);
        if (last >= trial_length())
            throw Error("config", "stimulation does not fit in the trial window");
    }
};

inline GraphTopology synth_topology(const SynthConfig& c)
{
    if (c.knn == 0)
        return build_grid_graph(c.rows, c.cols);
    std::vector<Point2> locs;
    for (index_t r = 0; r < c.rows; ++r)
        for (index_t col = 0; col < c.cols; ++col)
            locs.push_back({static_cast<double>(col), static_cast<double>(r)});
    return build_knn_graph(locs, c.knn);
}

/**
 * Random diffusive model: positive node memories (taps of each node summing
 * to at most 0.9) and positive edge weights (summing over lags to about
 * coupling_scale). All parameters are halved together until the stability
 * radius drops below 0.95.
 */
inline DiffusionModel random_stable_model(const GraphTopology& g, index_t order, double coupling_scale,
                                          std::uint64_t seed)
{
    if (coupling_scale < 0.0)
        throw Error("config", "coupling_scale must be nonnegative");
    if (order < 1)
        throw Error("config", "order must be positive");
    Rng rng(derive_seed(seed, "model"));
    DiffusionModel model = DiffusionModel::zeros(g.node_count(), g.edge_count(), order);
    const double k = static_cast<double>(order);
    for (index_t lag = 1; lag <= order; ++lag) {
        for (index_t n = 0; n < g.node_count(); ++n)
            model.memory(lag)[n] = rng.uniform(0.3, 1.0) * 0.9 / k;
        for (index_t e = 0; e < g.edge_count(); ++e)
            model.weights(lag)[e] = coupling_scale * rng.uniform(0.5, 1.5) / k;
    }
    for (int halvings = 0; halvings <= 100; ++halvings) {
        if (stability_radius(model, g) < 0.95)
            return model;
        model = DiffusionModel(model.node_memory() * 0.5, model.edge_weights() * 0.5);
    }
    throw Error("instability", "could not stabilize the random model within 100 halvings");
}

struct SyntheticSession
{
    SessionDataset dataset;
    DiffusionModel truth;
};

/**
 * Simulates every trial independently from its own derived seed: a random
 * pre-trial state of K rows, free evolution until the first laser, impulse
 * of fixed amplitude at the stimulation node (and a second one after the
 * inter-laser delay), innovation noise throughout.
 */
inline SyntheticSession generate_session(const SynthConfig& c, unsigned workers = 1)
{
    c.validate();
    GraphTopology topo = synth_topology(c);
    DiffusionModel truth = random_stable_model(topo, c.order, c.coupling_scale, c.seed);
    const index_t n = topo.node_count();

    Rng pick(derive_seed(c.seed, "stim"));
    const index_t first = c.stim_node >= 0 ? c.stim_node : static_cast<index_t>(pick.below(static_cast<std::uint64_t>(n)));
    const index_t second =
        c.second_stim_node >= 0 ? c.second_stim_node : static_cast<index_t>(pick.below(static_cast<std::uint64_t>(n)));

    const index_t length = c.trial_length();
    const index_t delay = static_cast<index_t>(std::lround(c.delay_ms * c.sampling_rate_hz / 1000.0));
    std::vector<index_t> offsets{c.prestim_samples};
    if (c.laser_count == 2)
        offsets.push_back(c.prestim_samples + delay);

    std::vector<Block> blocks(static_cast<std::size_t>(c.blocks));
    for (auto& b : blocks) {
        b.data = Series::Zero(c.trials_per_block * length, n);
        for (index_t i = 0; i < c.trials_per_block; ++i)
            b.trials.push_back({i * length, length, offsets, first, topo.location(first), c.laser_count,
                                c.laser_count == 2 ? c.delay_ms : 0.0});
    }

    const auto total = static_cast<std::size_t>(c.blocks * c.trials_per_block);
    parallel_for(total, workers, [&](std::size_t job) {
        const auto bi = static_cast<index_t>(job) / c.trials_per_block;
        const auto ti = static_cast<index_t>(job) % c.trials_per_block;
        Rng rng(derive_seed(c.seed, "trial", bi, ti));
        Series init(c.order, n);
        for (index_t r = 0; r < c.order; ++r)
            for (index_t col = 0; col < n; ++col)
                init(r, col) = c.background_std * rng.normal();
        const index_t steps = length - c.order;
        Series input = Series::Zero(steps, n);
        input(offsets[0] - c.order, first) += c.amplitude();
        if (c.laser_count == 2)
            input(offsets[1] - c.order, second) += c.amplitude();
        const Series sim = simulate(truth, topo, init, input, steps, c.noise_std, derive_seed(c.seed, "noise", bi, ti));
        auto seg = blocks[static_cast<std::size_t>(bi)].data.middleRows(ti * length, length);
        seg.topRows(c.order) = init;
        seg.bottomRows(steps) = sim;
    });

    return {SessionDataset{std::move(topo), std::move(blocks), c.sampling_rate_hz, c.fit_window_ms}, std::move(truth)};
}

} // namespace neuroflow
