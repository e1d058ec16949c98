#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "memshape/env.hpp"

namespace memshape {

// One batch of ordered transitions, possibly spanning several episodes.
// done[t] marks an episode boundary after step t; truncated[t] additionally
// marks the boundary as a time-limit cut rather than a terminal state.
struct Rollout {
    Eigen::MatrixXd features;  // feature_size x T, column t = observation at step t
    std::vector<std::string> obs_keys;
    std::vector<int> actions;
    std::vector<double> logprob_old;
    std::vector<double> rewards;
    std::vector<double> values;
    std::vector<std::uint8_t> done;
    std::vector<std::uint8_t> truncated;
    std::vector<std::uint8_t> events;
    std::vector<std::optional<GridPos>> positions;
    std::vector<double> utility;  // U_t, filled by the shaping pass (zeros otherwise)
    double bootstrap_value = 0.0; // critic estimate past the last step; 0 when it closed an episode

    int steps() const { return static_cast<int>(actions.size()); }
};

// Half-open [start, end) episode segments; a trailing partial episode is
// included as the final range.
inline std::vector<std::pair<int, int>> episode_ranges(const Rollout& rollout) {
    std::vector<std::pair<int, int>> out;
    int start = 0;
    for (int t = 0; t < rollout.steps(); ++t) {
        if (rollout.done[t]) {
            out.emplace_back(start, t + 1);
            start = t + 1;
        }
    }
    if (start < rollout.steps()) out.emplace_back(start, rollout.steps());
    return out;
}

}  // namespace memshape
