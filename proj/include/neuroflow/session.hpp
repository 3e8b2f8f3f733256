#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "common.hpp"
#include "diffusion_model.hpp"
#include "graph_topology.hpp"

namespace neuroflow {

/// One stimulation event. Offsets are in samples relative to `start`.
struct Trial
{
    index_t start = 0;  ///< first row of the trial in the block series
    index_t length = 0; ///< rows in the trial segment
    std::vector<index_t> stim_offsets;
    index_t stim_node = -1;
    Point2 stim_location;
    int laser_count = 1;
    double delay_ms = 0.0;
};

struct Block
{
    Series data; ///< rows = samples, columns = channels
    std::vector<Trial> trials;
};

struct SessionDataset
{
    GraphTopology topology;
    std::vector<Block> blocks;
    double sampling_rate_hz = 1000.0;
    double fit_window_ms = 30.0; ///< window length after the last laser

    index_t ms_to_samples(double ms) const { return static_cast<index_t>(std::lround(ms * sampling_rate_hz / 1000.0)); }

    void validate() const
    {
        const index_t n = topology.node_count();
        if (sampling_rate_hz <= 0.0)
            throw Error("session", "sampling rate must be positive");
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const Block& blk = blocks[b];
            if (blk.data.cols() != n)
                throw Error("session", "block " + std::to_string(b) + " has " + std::to_string(blk.data.cols()) +
                                           " channels, topology has " + std::to_string(n));
            index_t prev_end = 0;
            for (const Trial& tr : blk.trials) {
                if (tr.start < prev_end || tr.length < 1 || tr.start + tr.length > blk.data.rows())
                    throw Error("session", "trial segments in block " + std::to_string(b) +
                                               " overlap or exceed the block");
                if (tr.stim_offsets.empty())
                    throw Error("session", "trial without stimulation time");
                for (index_t o : tr.stim_offsets)
                    if (o < 0 || o >= tr.length)
                        throw Error("session", "stimulation offset outside its trial");
                if (!std::is_sorted(tr.stim_offsets.begin(), tr.stim_offsets.end()))
                    throw Error("session", "stimulation offsets must be ascending");
                prev_end = tr.start + tr.length;
            }
        }
    }
};

/// Per-channel demeaned copy of a series plus the subtracted means.
struct Demeaned
{
    Series series;
    Vector means;
};

inline Demeaned demean(const Series& series)
{
    if (series.rows() == 0)
        throw Error("session", "cannot demean an empty series");
    Vector means = series.colwise().mean().transpose();
    Series out = series.rowwise() - means.transpose();
    return {std::move(out), std::move(means)};
}

/// Trial segments of a session, flattened across blocks, ready for fitting.
struct PreparedSession
{
    struct SegmentInfo
    {
        index_t block = 0;
        index_t trial = 0; ///< index within the block
        std::vector<index_t> stim_offsets;
        index_t window_end = 0; ///< last admissible target row (inclusive)
    };

    std::vector<Series> segments;
    std::vector<SegmentInfo> info;
    std::vector<Vector> block_means; ///< zero vectors when demeaning is off
};

/**
 * Cuts each trial out of its block. The fit window of a trial runs from the
 * first stimulation sample to `fit_window_ms` after the last one (clipped to
 * the trial). With `demean`, each block's channels are centered on the mean
 * over the fit windows of that block's trials.
 */
inline PreparedSession prepare_session(const SessionDataset& session, bool demean_channels)
{
    session.validate();
    PreparedSession out;
    const index_t n = session.topology.node_count();
    const index_t tail = session.ms_to_samples(session.fit_window_ms);
    for (std::size_t b = 0; b < session.blocks.size(); ++b) {
        const Block& blk = session.blocks[b];
        Vector mean = Vector::Zero(n);
        if (demean_channels) {
            index_t count = 0;
            for (const Trial& tr : blk.trials) {
                const index_t lo = tr.stim_offsets.front();
                const index_t hi = std::min(tr.stim_offsets.back() + tail, tr.length - 1);
                for (index_t r = lo; r <= hi; ++r)
                    mean += blk.data.row(tr.start + r).transpose();
                count += hi - lo + 1;
            }
            if (count > 0)
                mean /= static_cast<double>(count);
        }
        for (std::size_t i = 0; i < blk.trials.size(); ++i) {
            const Trial& tr = blk.trials[i];
            Series seg = blk.data.middleRows(tr.start, tr.length);
            if (demean_channels)
                seg.rowwise() -= mean.transpose();
            out.segments.push_back(std::move(seg));
            out.info.push_back({static_cast<index_t>(b), static_cast<index_t>(i), tr.stim_offsets,
                                std::min(tr.stim_offsets.back() + tail, tr.length - 1)});
        }
        out.block_means.push_back(std::move(mean));
    }
    return out;
}

/// Train/test segment ids: per block the first floor(fraction * trials)
/// trials train, the rest test.
struct TrainTestSplit
{
    std::vector<index_t> train;
    std::vector<index_t> test;
};

inline TrainTestSplit split_train_test(const PreparedSession& prepared, double train_fraction = 0.8)
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw Error("config", "train fraction must lie in (0, 1)");
    TrainTestSplit out;
    std::size_t i = 0;
    while (i < prepared.info.size()) {
        const index_t block = prepared.info[i].block;
        std::size_t j = i;
        while (j < prepared.info.size() && prepared.info[j].block == block)
            ++j;
        const auto count = static_cast<index_t>(j - i);
        if (count < 5)
            throw Error("split", "block " + std::to_string(block) + " has " + std::to_string(count) +
                                     " trials; at least 5 are required");
        const auto ntrain = static_cast<index_t>(std::floor(train_fraction * static_cast<double>(count)));
        for (index_t r = 0; r < count; ++r)
            (r < ntrain ? out.train : out.test).push_back(static_cast<index_t>(i) + r);
        i = j;
    }
    return out;
}

/**
 * Admissible targets of the given segments for a model of the given order:
 * rows after the first stimulation up to the window end, excluding the
 * stimulation samples themselves (the model has no input term), and only where
 * all K predecessors lie inside the same segment.
 */
inline std::vector<TimeIndex> target_indices(const PreparedSession& prepared, std::span<const index_t> segment_ids,
                                             index_t order)
{
    std::vector<TimeIndex> out;
    for (index_t sid : segment_ids) {
        const auto& info = prepared.info[static_cast<std::size_t>(sid)];
        for (index_t t = std::max(info.stim_offsets.front() + 1, order); t <= info.window_end; ++t) {
            if (std::binary_search(info.stim_offsets.begin(), info.stim_offsets.end(), t))
                continue;
            out.push_back({sid, t});
        }
    }
    return out;
}

inline std::vector<index_t> all_segments(const PreparedSession& prepared)
{
    std::vector<index_t> ids(prepared.segments.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        ids[i] = static_cast<index_t>(i);
    return ids;
}

} // namespace neuroflow
