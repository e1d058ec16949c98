#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace memshape {

// Subgoal-style events an environment can raise on a step. Stored as a bitmask.
enum EventTag : std::uint8_t {
    kEventKeyPicked = 1u << 0,
    kEventDoorOpened = 1u << 1,
    kEventGoalReached = 1u << 2,
};

inline std::vector<std::string> event_names(std::uint8_t events) {
    std::vector<std::string> out;
    if (events & kEventKeyPicked) out.push_back("key_picked");
    if (events & kEventDoorOpened) out.push_back("door_opened");
    if (events & kEventGoalReached) out.push_back("goal_reached");
    return out;
}

struct Observation {
    Eigen::VectorXd features;
    // Canonical encoding of the raw (partial) view. Identical views produce
    // identical keys; distinct views produce distinct keys.
    std::string key;
    std::uint8_t events = 0;
};

struct StepResult {
    Observation observation;
    double reward = 0.0;
    bool done = false;       // episode boundary (terminal or truncated)
    bool truncated = false;  // boundary caused by the step limit
};

using GridPos = std::pair<int, int>;  // (row, col)

// Common surface for the two gridworlds. Instances are self-contained value
// objects: one internal RNG stream drives layout sampling and any stochastic
// dynamics, so (seed, action sequence) fixes the episode transcript.
class Env {
public:
    virtual ~Env() = default;

    virtual void seed(std::uint64_t s) = 0;
    virtual Observation reset() = 0;
    virtual StepResult step(int action) = 0;

    virtual int feature_size() const = 0;
    virtual int action_count() const = 0;
    virtual const std::vector<std::string>& action_names() const = 0;

    // Ground-truth agent coordinates, used only for utility shaping.
    virtual std::optional<GridPos> agent_position() const = 0;
    // Height + width, the distance scale for positional overlap.
    virtual int position_scale() const = 0;

    // Agent-visible window as text, for guidance prompts. Never includes
    // cells outside the window.
    virtual std::string render_view() const = 0;
    // Full layout as text, one character per cell, for `dump-layout`.
    virtual std::string dump_layout() const = 0;

    virtual std::string id() const = 0;
    virtual int max_steps() const = 0;
};

}  // namespace memshape
