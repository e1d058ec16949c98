#pragma once

#include <memory>
#include <string>
#include <vector>

#include "memshape/env.hpp"
#include "memshape/errors.hpp"
#include "memshape/frozenlake.hpp"
#include "memshape/rng.hpp"

namespace memshape {

enum class CellKind : std::uint8_t { Empty = 0, Wall = 1, Door = 2, Key = 3, Goal = 4 };

// DoorKey gridworld: an outer-walled NxN grid split by one wall column with a
// single locked door. The key spawns on the agent's side, the goal in the far
// corner. Actions: 0 turn-left, 1 turn-right, 2 forward, 3 pickup, 4 toggle.
// The agent observes an egocentric 5x5 forward window (one-hot cell kind +
// locked flag per cell) concatenated with its carrying flag. Layouts are
// re-sampled from the seeded stream on every reset.
class DoorKeyEnv final : public Env {
public:
    static constexpr int kView = 5;

    explicit DoorKeyEnv(int size = 6, std::uint64_t seed_value = 0) : size_(size) {
        if (size < 5) throw ConfigError("doorkey: grid size must be >= 5, got " + std::to_string(size));
        seed(seed_value);
    }

    void seed(std::uint64_t s) override { rng_ = make_rng(s, 0x646f6f72ULL); }

    Observation reset() override {
        grid_.assign(size_ * size_, CellKind::Empty);
        for (int i = 0; i < size_; ++i) {
            at(0, i) = CellKind::Wall;
            at(size_ - 1, i) = CellKind::Wall;
            at(i, 0) = CellKind::Wall;
            at(i, size_ - 1) = CellKind::Wall;
        }
        wall_col_ = 2 + uniform_int(rng_, size_ - 4);
        door_row_ = 1 + uniform_int(rng_, size_ - 2);
        for (int r = 1; r < size_ - 1; ++r) at(r, wall_col_) = CellKind::Wall;
        at(door_row_, wall_col_) = CellKind::Door;
        door_locked_ = true;
        door_open_ = false;

        at(size_ - 2, size_ - 2) = CellKind::Goal;

        // key and agent on the left of the dividing wall, on distinct cells
        std::vector<GridPos> left;
        for (int r = 1; r < size_ - 1; ++r)
            for (int c = 1; c < wall_col_; ++c) left.emplace_back(r, c);
        const int key_idx = uniform_int(rng_, static_cast<int>(left.size()));
        key_pos_ = left[key_idx];
        at(key_pos_.first, key_pos_.second) = CellKind::Key;
        int agent_idx = uniform_int(rng_, static_cast<int>(left.size()) - 1);
        if (agent_idx >= key_idx) ++agent_idx;
        pos_ = left[agent_idx];
        dir_ = uniform_int(rng_, 4);
        carrying_key_ = false;
        step_count_ = 0;
        episode_over_ = false;
        return observe(0);
    }

    StepResult step(int action) override {
        if (action < 0 || action >= 5)
            throw InvalidActionError("doorkey: action out of range: " + std::to_string(action));
        if (episode_over_) throw std::logic_error("doorkey: step() on a finished episode");

        ++step_count_;
        StepResult result;
        std::uint8_t events = 0;
        const GridPos ahead = facing();
        switch (action) {
            case 0: dir_ = (dir_ + 3) % 4; break;
            case 1: dir_ = (dir_ + 1) % 4; break;
            case 2:
                if (passable(ahead)) {
                    pos_ = ahead;
                    if (at(pos_.first, pos_.second) == CellKind::Goal) {
                        episode_over_ = true;
                        result.done = true;
                        result.reward = 1.0 - 0.9 * static_cast<double>(step_count_) / max_steps();
                        events |= kEventGoalReached;
                    }
                }
                break;
            case 3:
                if (at(ahead.first, ahead.second) == CellKind::Key && !carrying_key_) {
                    carrying_key_ = true;
                    at(ahead.first, ahead.second) = CellKind::Empty;
                    events |= kEventKeyPicked;
                }
                break;
            case 4:
                if (at(ahead.first, ahead.second) == CellKind::Door && door_locked_ && carrying_key_) {
                    door_locked_ = false;
                    door_open_ = true;
                    events |= kEventDoorOpened;
                }
                break;
        }
        if (!episode_over_ && step_count_ >= max_steps()) {
            episode_over_ = true;
            result.done = true;
            result.truncated = true;
        }
        result.observation = observe(events);
        return result;
    }

    int feature_size() const override { return kView * kView * 6 + 1; }
    int action_count() const override { return 5; }
    const std::vector<std::string>& action_names() const override {
        static const std::vector<std::string> kNames = {"left", "right", "forward", "pickup", "toggle"};
        return kNames;
    }

    std::optional<GridPos> agent_position() const override { return pos_; }
    int position_scale() const override { return 2 * size_; }

    std::string render_view() const override {
        // furthest row first, agent at bottom-center
        std::string out;
        for (int f = kView - 1; f >= 0; --f) {
            for (int l = -kView / 2; l <= kView / 2; ++l) {
                if (f == 0 && l == 0)
                    out += '@';
                else
                    out += glyph(view_cell(f, l));
            }
            out += '\n';
        }
        out += carrying_key_ ? "carrying key: yes\n" : "carrying key: no\n";
        return out;
    }

    std::string dump_layout() const override {
        std::string out;
        for (int r = 0; r < size_; ++r) {
            for (int c = 0; c < size_; ++c) {
                if (GridPos{r, c} == pos_)
                    out += "E>SvW<N^"[2 * dir_ + 1];
                else
                    out += glyph(cell_view(r, c));
            }
            out += '\n';
        }
        return out;
    }

    std::string id() const override { return "doorkey"; }
    int max_steps() const override { return 10 * size_ * size_; }

    int grid_size() const { return size_; }
    GridPos key_pos() const { return key_pos_; }
    GridPos door_pos() const { return {door_row_, wall_col_}; }
    GridPos goal_pos() const { return {size_ - 2, size_ - 2}; }
    int agent_dir() const { return dir_; }
    bool carrying_key() const { return carrying_key_; }
    bool door_locked() const { return door_locked_; }
    bool door_open() const { return door_open_; }
    int step_count() const { return step_count_; }
    CellKind kind_at(int r, int c) const { return grid_[r * size_ + c]; }

    // Canonical key over a rendered view: one character per cell plus the
    // carrying flag. Distinct views map to distinct keys.
    static std::string view_key(const std::string& cells, bool carrying) {
        return cells + (carrying ? "|c" : "|-");
    }

private:
    struct ViewCell {
        CellKind kind;
        bool locked;
    };

    CellKind& at(int r, int c) { return grid_[r * size_ + c]; }
    CellKind at(int r, int c) const { return grid_[r * size_ + c]; }

    static GridPos dir_vec(int dir) {
        switch (dir & 3) {
            case 0: return {0, 1};   // east
            case 1: return {1, 0};   // south
            case 2: return {0, -1};  // west
            default: return {-1, 0}; // north
        }
    }

    GridPos facing() const {
        const GridPos d = dir_vec(dir_);
        return {pos_.first + d.first, pos_.second + d.second};
    }

    bool passable(GridPos p) const {
        switch (at(p.first, p.second)) {
            case CellKind::Empty:
            case CellKind::Goal:
                return true;
            case CellKind::Door:
                return door_open_;
            default:
                return false;
        }
    }

    ViewCell cell_view(int r, int c) const {
        if (r < 0 || r >= size_ || c < 0 || c >= size_) return {CellKind::Wall, false};
        const CellKind kind = at(r, c);
        return {kind, kind == CellKind::Door && door_locked_};
    }

    // forward offset f in [0,4], lateral offset l in [-2,2]
    ViewCell view_cell(int f, int l) const {
        const GridPos fwd = dir_vec(dir_);
        const GridPos right = dir_vec(dir_ + 1);
        const int r = pos_.first + f * fwd.first + l * right.first;
        const int c = pos_.second + f * fwd.second + l * right.second;
        return cell_view(r, c);
    }

    static char glyph(ViewCell cell) {
        switch (cell.kind) {
            case CellKind::Empty: return '.';
            case CellKind::Wall: return '#';
            case CellKind::Door: return cell.locked ? 'D' : 'd';
            case CellKind::Key: return 'K';
            default: return 'G';
        }
    }

    Observation observe(std::uint8_t events) const {
        Observation obs;
        obs.features = Eigen::VectorXd::Zero(feature_size());
        std::string cells;
        cells.reserve(kView * kView);
        int offset = 0;
        for (int f = 0; f < kView; ++f) {
            for (int l = -kView / 2; l <= kView / 2; ++l) {
                const ViewCell cell = view_cell(f, l);
                obs.features[offset + static_cast<int>(cell.kind)] = 1.0;
                obs.features[offset + 5] = cell.locked ? 1.0 : 0.0;
                offset += 6;
                cells += glyph(cell);
            }
        }
        obs.features[offset] = carrying_key_ ? 1.0 : 0.0;
        obs.key = view_key(cells, carrying_key_);
        obs.events = events;
        return obs;
    }

    int size_;
    std::mt19937_64 rng_;
    std::vector<CellKind> grid_;
    int wall_col_ = 0;
    int door_row_ = 0;
    bool door_locked_ = true;
    bool door_open_ = false;
    GridPos key_pos_{0, 0};
    GridPos pos_{0, 0};
    int dir_ = 0;
    bool carrying_key_ = false;
    int step_count_ = 0;
    bool episode_over_ = true;
};

inline std::unique_ptr<Env> make_env(const std::string& id, bool slippery, int size) {
    if (id == "frozenlake8x8") return std::make_unique<FrozenLakeEnv>(slippery);
    if (id == "doorkey") return std::make_unique<DoorKeyEnv>(size);
    throw ConfigError("unknown environment id: " + id);
}

}  // namespace memshape
