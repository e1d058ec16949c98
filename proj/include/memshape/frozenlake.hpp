#pragma once

#include <array>
#include <string>
#include <vector>

#include "memshape/env.hpp"
#include "memshape/errors.hpp"
#include "memshape/rng.hpp"

namespace memshape {

// Canonical 8x8 lake layout: S start, F frozen, H hole, G goal.
inline const std::array<std::string, 8>& frozenlake_map8x8() {
    static const std::array<std::string, 8> kMap = {
        "SFFFFFFF", "FFFFFFFF", "FFFHFFFF", "FFFFFHFF",
        "FFFHFFFF", "FHHFFFHF", "FHFFHFHF", "FFFHFFFG",
    };
    return kMap;
}

// FrozenLake-8x8. Actions: 0 left, 1 down, 2 right, 3 up. With slippery
// dynamics the realized move is the intended direction or either
// perpendicular, each with probability 1/3. Moving off-grid keeps position.
// Reaching a hole terminates with reward 0, the goal with reward 1.
class FrozenLakeEnv final : public Env {
public:
    static constexpr int kSize = 8;
    static constexpr int kMaxSteps = 200;

    explicit FrozenLakeEnv(bool slippery = false, std::uint64_t seed_value = 0)
        : slippery_(slippery) {
        seed(seed_value);
    }

    void seed(std::uint64_t s) override { rng_ = make_rng(s, 0x66726f7aULL); }

    Observation reset() override {
        cell_ = 0;
        step_count_ = 0;
        episode_over_ = false;
        return observe(0);
    }

    StepResult step(int action) override {
        if (action < 0 || action >= 4)
            throw InvalidActionError("frozenlake: action out of range: " + std::to_string(action));
        if (episode_over_)
            throw std::logic_error("frozenlake: step() on a finished episode");

        int realized = action;
        if (slippery_) {
            // intended, left-perpendicular, right-perpendicular, each 1/3
            realized = (action + uniform_int(rng_, 3) + 3) % 4;
        }
        int row = cell_ / kSize;
        int col = cell_ % kSize;
        switch (realized) {
            case 0: col -= 1; break;  // left
            case 1: row += 1; break;  // down
            case 2: col += 1; break;  // right
            case 3: row -= 1; break;  // up
        }
        if (row >= 0 && row < kSize && col >= 0 && col < kSize) cell_ = row * kSize + col;
        ++step_count_;

        const char tile = tile_at(cell_);
        StepResult result;
        std::uint8_t events = 0;
        if (tile == 'H') {
            episode_over_ = true;
            result.done = true;
        } else if (tile == 'G') {
            episode_over_ = true;
            result.done = true;
            result.reward = 1.0;
            events = kEventGoalReached;
        } else if (step_count_ >= kMaxSteps) {
            episode_over_ = true;
            result.done = true;
            result.truncated = true;
        }
        result.observation = observe(events);
        return result;
    }

    int feature_size() const override { return kSize * kSize; }
    int action_count() const override { return 4; }
    const std::vector<std::string>& action_names() const override {
        static const std::vector<std::string> kNames = {"left", "down", "right", "up"};
        return kNames;
    }

    std::optional<GridPos> agent_position() const override {
        return GridPos{cell_ / kSize, cell_ % kSize};
    }
    int position_scale() const override { return 2 * kSize; }

    std::string render_view() const override {
        const int row = cell_ / kSize;
        const int col = cell_ % kSize;
        std::string out;
        for (int r = row - 1; r <= row + 1; ++r) {
            for (int c = col - 1; c <= col + 1; ++c) {
                if (r < 0 || r >= kSize || c < 0 || c >= kSize)
                    out += '#';
                else
                    out += frozenlake_map8x8()[r][c];
            }
            out += '\n';
        }
        return out;
    }

    std::string dump_layout() const override {
        std::string out;
        for (const auto& row : frozenlake_map8x8()) {
            out += row;
            out += '\n';
        }
        return out;
    }

    std::string id() const override { return "frozenlake8x8"; }
    int max_steps() const override { return kMaxSteps; }

    int cell() const { return cell_; }
    int step_count() const { return step_count_; }

private:
    static char tile_at(int cell) { return frozenlake_map8x8()[cell / kSize][cell % kSize]; }

    Observation observe(std::uint8_t events) const {
        Observation obs;
        obs.features = Eigen::VectorXd::Zero(kSize * kSize);
        obs.features[cell_] = 1.0;
        obs.key = "c" + std::to_string(cell_);
        obs.events = events;
        return obs;
    }

    bool slippery_;
    std::mt19937_64 rng_;
    int cell_ = 0;
    int step_count_ = 0;
    bool episode_over_ = true;
};

}  // namespace memshape
