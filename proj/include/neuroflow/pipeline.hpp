#pragma once

#include <vector>

#include "broadcaster.hpp"
#include "common.hpp"
#include "diffusion_model.hpp"
#include "estimation.hpp"
#include "hodge.hpp"
#include "session.hpp"

namespace neuroflow {

/// Flow model fitted on the training trials of all blocks pooled.
inline DiffusionModel fit_session_model(const SessionDataset& session, const FitConfig& config, bool no_flow = false,
                                        double train_fraction = 0.8)
{
    const PreparedSession prep = prepare_session(session, config.demean);
    const TrainTestSplit split = split_train_test(prep, train_fraction);
    const auto targets = target_indices(prep, split.train, config.order);
    return no_flow ? fit_no_flow(session.topology, prep.segments, targets, config)
                   : fit(session.topology, prep.segments, targets, config);
}

/**
 * Trial-averaged flow `at_ms` after the first laser. Every trial must have
 * that sample inside its segment with K predecessors.
 */
inline Vector trial_average_flow(const SessionDataset& session, const DiffusionModel& model, double at_ms,
                                 bool demean_channels = true)
{
    model.check_against(session.topology);
    if (at_ms < 0.0)
        throw Error("window", "evaluation time must be nonnegative");
    const PreparedSession prep = prepare_session(session, demean_channels);
    if (prep.segments.empty())
        throw Error("empty", "session has no trials");
    const index_t lag = session.ms_to_samples(at_ms);
    std::vector<TimeIndex> at;
    for (std::size_t i = 0; i < prep.segments.size(); ++i) {
        const index_t t = prep.info[i].stim_offsets.front() + lag;
        if (t >= prep.segments[i].rows() || t - model.order() < 0)
            throw Error("window", std::to_string(at_ms) + " ms after stimulation lies outside trial " +
                                      std::to_string(i) + " or lacks model history");
        at.push_back({static_cast<index_t>(i), t});
    }
    const EdgeFlowSeries flows = flow_series(model, session.topology, prep.segments, at);
    Vector mean = Vector::Zero(session.topology.edge_count());
    for (const auto& f : flows)
        mean += f.flow;
    return mean / static_cast<double>(flows.size());
}

/// Stimulation site of the first laser, taken from the first trial.
inline Point2 first_stimulation_site(const SessionDataset& session)
{
    for (const auto& b : session.blocks)
        if (!b.trials.empty())
            return b.trials.front().stim_location;
    throw Error("empty", "session has no trials");
}

/// Broadcaster of the low-pass filtered gradient part of the trial-averaged flow.
inline BroadcastReport broadcast_session(const SessionDataset& session, const DiffusionModel& model, double at_ms,
                                         const GradientFilter& filter, const GradientModeBasis& basis)
{
    const Vector f = trial_average_flow(session, model, at_ms);
    const HodgeDecomposition d = hodge_decompose(session.topology, basis, f);
    const Vector smooth = lowpass_gradient(d, basis, filter);
    return localize_broadcaster(session.topology, smooth, first_stimulation_site(session));
}

} // namespace neuroflow
