#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "memshape/errors.hpp"
#include "memshape/memory_graph.hpp"
#include "memshape/rollout.hpp"

namespace memshape {

// Per-node monotone progress pointer: node_id -> last matched step index.
// Enforces forward-only alignment against each stored segment; cleared at
// every episode boundary.
struct MatchState {
    std::unordered_map<std::int64_t, int> last_matched;

    int pointer(std::int64_t node_id) const {
        auto it = last_matched.find(node_id);
        return it == last_matched.end() ? -1 : it->second;
    }
    void advance(std::int64_t node_id, int step_index) { last_matched[node_id] = step_index; }
    void clear() { last_matched.clear(); }
};

struct UtilityStep {
    double u = 0.0;
    double r_hat = 0.0;
    double rho = 0.0;
    double s = 0.0;
    std::int64_t node_id = -1;  // -1 when unmatched
    int node_step = -1;
};

struct UtilityTrace {
    std::vector<UtilityStep> steps;
};

// |A∩B| / |A∪B|; two empty sets agree vacuously (1.0).
inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& x : a) inter += b.count(x);
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// s = w_a * [actions equal] + w_p * positional overlap. With both positions
// present the overlap is max(0, 1 - manhattan/d_max); otherwise it falls back
// to obs_key equality.
inline double step_similarity(const std::string& obs_key, const std::optional<GridPos>& position,
                              int action, const TrajStep& node_step, double d_max,
                              double w_a = 0.5, double w_p = 0.5) {
    double s = action == node_step.action ? w_a : 0.0;
    if (position && node_step.position) {
        const double manhattan = std::abs(position->first - node_step.position->first) +
                                 std::abs(position->second - node_step.position->second);
        s += w_p * std::max(0.0, 1.0 - manhattan / d_max);
    } else if (obs_key == node_step.obs_key) {
        s += w_p;
    }
    return s;
}

// Matches every rollout step against the graph: candidates are the exact-key
// index hits whose step index lies past the node's progress pointer; the one
// maximizing r_hat * rho * s wins (ties: lowest node id, then lowest step
// index) and advances its pointer, even when the product is zero. Fills
// rollout.utility and returns the component trace. Episode boundaries reset
// the match state.
inline UtilityTrace compute_utility(MemoryGraph& graph, Rollout& rollout, MatchState& match_state,
                                    double d_max) {
    UtilityTrace trace;
    trace.steps.resize(rollout.steps());
    rollout.utility.assign(rollout.steps(), 0.0);
    const std::set<std::string> target_set = graph.target_goal_set();

    std::unordered_map<std::int64_t, double> rho_cache;
    auto rho_of = [&](std::int64_t node_id) {
        auto it = rho_cache.find(node_id);
        if (it != rho_cache.end()) return it->second;
        const double rho = jaccard(target_set, graph.goal_set(graph.trajectory(node_id)));
        rho_cache.emplace(node_id, rho);
        return rho;
    };

    for (int t = 0; t < rollout.steps(); ++t) {
        UtilityStep& out = trace.steps[t];
        bool found = false;
        for (const auto& [node_id, step_idx] : graph.lookup(rollout.obs_keys[t])) {
            if (step_idx <= match_state.pointer(node_id)) continue;
            const TrajectoryNode& node = graph.trajectory(node_id);
            const double rho = rho_of(node_id);
            const double s = step_similarity(rollout.obs_keys[t], rollout.positions[t],
                                             rollout.actions[t], node.steps[step_idx], d_max);
            const double u = node.r_hat * rho * s;
            const bool better =
                !found || u > out.u ||
                (u == out.u && (node_id < out.node_id ||
                                (node_id == out.node_id && step_idx < out.node_step)));
            if (better) {
                out = {u, node.r_hat, rho, s, node_id, step_idx};
                found = true;
            }
        }
        if (found) {
            match_state.advance(out.node_id, out.node_step);
            rollout.utility[t] = out.u;
        }
        if (rollout.done[t]) match_state.clear();
    }
    return trace;
}

// Arithmetic mean of U_t over the half-open episode range [begin, end).
inline double episode_mean_utility(const UtilityTrace& trace, int begin, int end) {
    if (begin < 0 || end > static_cast<int>(trace.steps.size()) || begin >= end)
        throw DimensionError("episode_mean_utility: invalid bounds");
    double sum = 0.0;
    for (int t = begin; t < end; ++t) sum += trace.steps[t].u;
    return sum / static_cast<double>(end - begin);
}

}  // namespace memshape
