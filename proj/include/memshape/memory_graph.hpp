#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "memshape/env.hpp"
#include "memshape/errors.hpp"
#include "memshape/frozenlake.hpp"

namespace memshape {

struct TrajStep {
    std::string obs_key;
    std::optional<GridPos> position;
    int action = 0;
};

enum class NodeOrigin { OfflinePrior, OnlineLlm, AgentRollout };

inline std::string origin_name(NodeOrigin origin) {
    switch (origin) {
        case NodeOrigin::OfflinePrior: return "offline_prior";
        case NodeOrigin::OnlineLlm: return "online_llm";
        default: return "agent_rollout";
    }
}

// A stored observation-action segment with its goal term and estimated reward.
struct TrajectoryNode {
    std::int64_t id = 0;
    std::vector<TrajStep> steps;
    std::string zeta;  // id of a goal or subgoal node
    double r_hat = 1.0;
    NodeOrigin origin = NodeOrigin::OfflinePrior;
    bool pinned = false;
    double access_score = 0.0;
};

struct SubgoalNode {
    std::string id;
    std::string label;
    std::string detection_event;  // empty when none
};

struct GoalNode {
    std::string id;
    std::string label;
    std::vector<std::string> children;  // subgoal ids, edge order
};

// Evolving store of trajectory segments, subgoals, and goals, with an exact
// observation-key index for per-step lookup. Trajectory ids increase
// monotonically, so the lowest id is the oldest node.
class MemoryGraph {
public:
    explicit MemoryGraph(std::size_t capacity = 256, double decay = 0.99)
        : capacity_(capacity), decay_(decay) {}

    void add_goal(const std::string& id, const std::string& label, bool is_target) {
        if (find_goal(id)) throw FormatError("duplicate goal id: " + id);
        goals_.push_back({id, label, {}});
        if (is_target) {
            if (!target_goal_.empty()) throw FormatError("second target goal: " + id);
            target_goal_ = id;
        }
    }

    void add_subgoal(const std::string& id, const std::string& label,
                     const std::string& detection_event = "") {
        if (find_subgoal(id)) throw FormatError("duplicate subgoal id: " + id);
        for (const auto& sg : subgoals_)
            if (sg.label == label) throw FormatError("duplicate subgoal label: " + label);
        subgoals_.push_back({id, label, detection_event});
    }

    void add_edge(const std::string& goal_id, const std::string& subgoal_id) {
        GoalNode* goal = find_goal(goal_id);
        if (!goal) throw FormatError("edge references unknown goal: " + goal_id);
        if (!find_subgoal(subgoal_id)) throw FormatError("edge references unknown subgoal: " + subgoal_id);
        if (std::find(goal->children.begin(), goal->children.end(), subgoal_id) == goal->children.end())
            goal->children.push_back(subgoal_id);
    }

    std::int64_t add_trajectory(std::vector<TrajStep> steps, const std::string& zeta, double r_hat,
                                NodeOrigin origin, bool pinned, double access_score = 0.0) {
        if (steps.empty()) throw FormatError("trajectory node needs at least one step");
        if (!find_goal(zeta) && !find_subgoal(zeta))
            throw FormatError("dangling zeta reference: " + zeta);
        if (r_hat < 0.0 || r_hat > 1.0)
            throw FormatError("estimated_reward out of [0,1]: " + std::to_string(r_hat));
        TrajectoryNode node;
        node.id = next_id_++;
        node.steps = std::move(steps);
        node.zeta = zeta;
        node.r_hat = r_hat;
        node.origin = origin;
        node.pinned = pinned;
        node.access_score = access_score;
        for (std::size_t i = 0; i < node.steps.size(); ++i)
            index_[node.steps[i].obs_key].emplace_back(node.id, static_cast<int>(i));
        const std::int64_t id = node.id;
        nodes_.emplace(id, std::move(node));
        return id;
    }

    // Exact-key hits in insertion order. Bumps the access score of each hit
    // node by one per returned entry.
    std::vector<std::pair<std::int64_t, int>> lookup(const std::string& obs_key) {
        auto it = index_.find(obs_key);
        if (it == index_.end()) return {};
        for (const auto& [node_id, step] : it->second) nodes_.at(node_id).access_score += 1.0;
        return it->second;
    }

    // Read-only variant used where score bookkeeping is deferred.
    const std::vector<std::pair<std::int64_t, int>>* peek(const std::string& obs_key) const {
        auto it = index_.find(obs_key);
        return it == index_.end() ? nullptr : &it->second;
    }

    // Store a completed episode iff it was successful and sufficiently novel:
    // the fraction of its steps whose obs_key already hits the index with a
    // matching action must stay below `novelty_threshold`. The node gets
    // r_hat = episode return, zeta = the target goal, origin agent_rollout.
    bool insert_rollout(const std::vector<TrajStep>& episode, double episode_return,
                        double success_threshold, double novelty_threshold = 0.5) {
        if (episode.empty() || episode_return < success_threshold) return false;
        std::size_t known = 0;
        for (const auto& step : episode) {
            const auto* entries = peek(step.obs_key);
            if (!entries) continue;
            for (const auto& [node_id, step_idx] : *entries) {
                if (nodes_.at(node_id).steps[step_idx].action == step.action) {
                    ++known;
                    break;
                }
            }
        }
        const double overlap = static_cast<double>(known) / static_cast<double>(episode.size());
        if (overlap >= novelty_threshold) return false;
        if (target_goal_.empty()) add_goal("goal", "goal", true);
        add_trajectory(episode, target_goal_, std::clamp(episode_return, 0.0, 1.0),
                       NodeOrigin::AgentRollout, false);
        return true;
    }

    // Decays every access score, then removes lowest-score unpinned nodes
    // (ties: oldest id) until the trajectory count fits the capacity. Goal and
    // subgoal nodes are never pruned.
    std::vector<std::int64_t> prune() {
        for (auto& [id, node] : nodes_) node.access_score *= decay_;
        std::vector<std::int64_t> removed;
        while (nodes_.size() > capacity_) {
            std::int64_t victim = -1;
            double lowest = 0.0;
            for (const auto& [id, node] : nodes_) {
                if (node.pinned) continue;
                if (victim < 0 || node.access_score < lowest) {
                    victim = id;
                    lowest = node.access_score;
                }
            }
            if (victim < 0) break;  // only pinned nodes left
            erase_node(victim);
            removed.push_back(victim);
        }
        return removed;
    }

    // Goal closure of a trajectory node's goal term: a goal brings its subgoal
    // children, a subgoal brings its parent goal(s).
    std::set<std::string> goal_set(const TrajectoryNode& node) const { return goal_set_of(node.zeta); }

    std::set<std::string> goal_set_of(const std::string& id) const {
        std::set<std::string> out;
        if (const GoalNode* goal = find_goal(id)) {
            out.insert(goal->id);
            out.insert(goal->children.begin(), goal->children.end());
            return out;
        }
        if (find_subgoal(id)) {
            out.insert(id);
            for (const auto& goal : goals_)
                if (std::find(goal.children.begin(), goal.children.end(), id) != goal.children.end())
                    out.insert(goal.id);
            return out;
        }
        throw FormatError("goal_set: unknown node id: " + id);
    }

    std::set<std::string> target_goal_set() const {
        if (target_goal_.empty()) return {};
        return goal_set_of(target_goal_);
    }

    const std::string& target_goal_id() const { return target_goal_; }
    std::size_t trajectory_count() const { return nodes_.size(); }
    std::size_t subgoal_count() const { return subgoals_.size(); }
    std::size_t goal_count() const { return goals_.size(); }
    std::size_t capacity() const { return capacity_; }
    double decay() const { return decay_; }
    std::size_t index_size() const { return index_entry_count(); }

    const TrajectoryNode& trajectory(std::int64_t id) const { return nodes_.at(id); }
    bool has_trajectory(std::int64_t id) const { return nodes_.count(id) > 0; }
    const std::map<std::int64_t, TrajectoryNode>& trajectories() const { return nodes_; }
    const std::vector<SubgoalNode>& subgoals() const { return subgoals_; }
    const std::vector<GoalNode>& goals() const { return goals_; }

    std::optional<std::string> subgoal_id_by_label(const std::string& label) const {
        for (const auto& sg : subgoals_)
            if (sg.label == label) return sg.id;
        return std::nullopt;
    }

    std::vector<std::string> subgoal_labels() const {
        std::vector<std::string> out;
        for (const auto& sg : subgoals_) out.push_back(sg.label);
        return out;
    }

private:
    GoalNode* find_goal(const std::string& id) {
        for (auto& g : goals_)
            if (g.id == id) return &g;
        return nullptr;
    }
    const GoalNode* find_goal(const std::string& id) const {
        return const_cast<MemoryGraph*>(this)->find_goal(id);
    }
    const SubgoalNode* find_subgoal(const std::string& id) const {
        for (const auto& sg : subgoals_)
            if (sg.id == id) return &sg;
        return nullptr;
    }

    void erase_node(std::int64_t id) {
        const TrajectoryNode& node = nodes_.at(id);
        for (const auto& step : node.steps) {
            auto it = index_.find(step.obs_key);
            if (it == index_.end()) continue;
            auto& entries = it->second;
            entries.erase(std::remove_if(entries.begin(), entries.end(),
                                         [id](const auto& e) { return e.first == id; }),
                          entries.end());
            if (entries.empty()) index_.erase(it);
        }
        nodes_.erase(id);
    }

    std::size_t index_entry_count() const {
        std::size_t n = 0;
        for (const auto& [key, entries] : index_) n += entries.size();
        return n;
    }

    std::size_t capacity_;
    double decay_;
    std::vector<GoalNode> goals_;
    std::vector<SubgoalNode> subgoals_;
    std::map<std::int64_t, TrajectoryNode> nodes_;
    std::unordered_map<std::string, std::vector<std::pair<std::int64_t, int>>> index_;
    std::string target_goal_;
    std::int64_t next_id_ = 1;
};

namespace detail {

inline void reject_unknown_fields(const nlohmann::json& obj,
                                  std::initializer_list<const char*> allowed,
                                  const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* a) { return it.key() == a; }) == allowed.end())
            throw FormatError("unknown field '" + it.key() + "' in " + where);
    }
}

inline std::string require_string(const nlohmann::json& obj, const char* field, const std::string& where) {
    if (!obj.contains(field) || !obj[field].is_string())
        throw FormatError("missing or non-string field '" + std::string(field) + "' in " + where);
    return obj[field].get<std::string>();
}

}  // namespace detail

// Derives an obs_key from a grid position for fully observable environments;
// returns nullopt where keys cannot be derived (partial views).
using ObsKeyDeriver = std::function<std::optional<std::string>(GridPos)>;

inline ObsKeyDeriver frozenlake_key_deriver() {
    return [](GridPos p) -> std::optional<std::string> {
        return "c" + std::to_string(p.first * FrozenLakeEnv::kSize + p.second);
    };
}

// Parses a prior document (or graph checkpoint, which reuses the schema with
// access_score/origin added). Unknown fields are rejected, naming the field.
inline MemoryGraph load_priors(const nlohmann::json& doc, std::size_t capacity = 256,
                               double decay = 0.99, const ObsKeyDeriver& derive_key = nullptr) {
    using nlohmann::json;
    if (!doc.is_object()) throw FormatError("prior document must be a JSON object");
    detail::reject_unknown_fields(doc, {"goal", "subgoals", "edges", "trajectories"}, "document");

    MemoryGraph graph(capacity, decay);
    if (doc.contains("goal") && !doc["goal"].is_null()) {
        const json& goal = doc["goal"];
        detail::reject_unknown_fields(goal, {"id", "label"}, "goal");
        graph.add_goal(detail::require_string(goal, "id", "goal"),
                       detail::require_string(goal, "label", "goal"), true);
    }
    if (doc.contains("subgoals")) {
        if (!doc["subgoals"].is_array()) throw FormatError("'subgoals' must be an array");
        for (std::size_t i = 0; i < doc["subgoals"].size(); ++i) {
            const json& sg = doc["subgoals"][i];
            const std::string where = "subgoals[" + std::to_string(i) + "]";
            detail::reject_unknown_fields(sg, {"id", "label", "detection_event"}, where);
            std::string event;
            if (sg.contains("detection_event")) {
                if (!sg["detection_event"].is_string())
                    throw FormatError("non-string field 'detection_event' in " + where);
                event = sg["detection_event"].get<std::string>();
            }
            graph.add_subgoal(detail::require_string(sg, "id", where),
                              detail::require_string(sg, "label", where), event);
        }
    }
    if (doc.contains("edges")) {
        if (!doc["edges"].is_array()) throw FormatError("'edges' must be an array");
        for (std::size_t i = 0; i < doc["edges"].size(); ++i) {
            const json& edge = doc["edges"][i];
            if (!edge.is_array() || edge.size() != 2 || !edge[0].is_string() || !edge[1].is_string())
                throw FormatError("edges[" + std::to_string(i) + "] must be [goal_id, subgoal_id]");
            graph.add_edge(edge[0].get<std::string>(), edge[1].get<std::string>());
        }
    }
    if (doc.contains("trajectories")) {
        if (!doc["trajectories"].is_array()) throw FormatError("'trajectories' must be an array");
        for (std::size_t i = 0; i < doc["trajectories"].size(); ++i) {
            const json& tr = doc["trajectories"][i];
            const std::string where = "trajectories[" + std::to_string(i) + "]";
            detail::reject_unknown_fields(
                tr, {"zeta", "estimated_reward", "pinned", "steps", "access_score", "origin"}, where);
            const std::string zeta = detail::require_string(tr, "zeta", where);
            double r_hat = 1.0;
            if (tr.contains("estimated_reward")) {
                if (!tr["estimated_reward"].is_number())
                    throw FormatError("non-numeric field 'estimated_reward' in " + where);
                r_hat = tr["estimated_reward"].get<double>();
            }
            bool pinned = true;  // prior nodes are pinned unless stated otherwise
            if (tr.contains("pinned")) {
                if (!tr["pinned"].is_boolean()) throw FormatError("non-boolean field 'pinned' in " + where);
                pinned = tr["pinned"].get<bool>();
            }
            double access_score = 0.0;
            if (tr.contains("access_score")) {
                if (!tr["access_score"].is_number())
                    throw FormatError("non-numeric field 'access_score' in " + where);
                access_score = tr["access_score"].get<double>();
            }
            NodeOrigin origin = NodeOrigin::OfflinePrior;
            if (tr.contains("origin")) {
                const std::string name = detail::require_string(tr, "origin", where);
                if (name == "offline_prior") origin = NodeOrigin::OfflinePrior;
                else if (name == "online_llm") origin = NodeOrigin::OnlineLlm;
                else if (name == "agent_rollout") origin = NodeOrigin::AgentRollout;
                else throw FormatError("unknown origin '" + name + "' in " + where);
            }
            if (!tr.contains("steps") || !tr["steps"].is_array() || tr["steps"].empty())
                throw FormatError("missing or empty field 'steps' in " + where);
            std::vector<TrajStep> steps;
            for (std::size_t s = 0; s < tr["steps"].size(); ++s) {
                const json& st = tr["steps"][s];
                const std::string swhere = where + ".steps[" + std::to_string(s) + "]";
                detail::reject_unknown_fields(st, {"obs_key", "position", "action"}, swhere);
                TrajStep step;
                if (!st.contains("action") || !st["action"].is_number_integer())
                    throw FormatError("missing or non-integer field 'action' in " + swhere);
                step.action = st["action"].get<int>();
                if (st.contains("position")) {
                    const json& pos = st["position"];
                    if (!pos.is_array() || pos.size() != 2 || !pos[0].is_number_integer() ||
                        !pos[1].is_number_integer())
                        throw FormatError("field 'position' must be [row, col] in " + swhere);
                    step.position = GridPos{pos[0].get<int>(), pos[1].get<int>()};
                }
                if (st.contains("obs_key")) {
                    if (!st["obs_key"].is_string())
                        throw FormatError("non-string field 'obs_key' in " + swhere);
                    step.obs_key = st["obs_key"].get<std::string>();
                } else if (step.position && derive_key) {
                    auto derived = derive_key(*step.position);
                    if (!derived)
                        throw FormatError("missing field 'obs_key' in " + swhere +
                                          " (not derivable from position)");
                    step.obs_key = *derived;
                } else {
                    throw FormatError("missing field 'obs_key' in " + swhere);
                }
                steps.push_back(std::move(step));
            }
            graph.add_trajectory(std::move(steps), zeta, r_hat, origin, pinned, access_score);
        }
    }
    return graph;
}

inline nlohmann::json graph_to_json(const MemoryGraph& graph) {
    using nlohmann::json;
    json doc;
    if (!graph.target_goal_id().empty()) {
        for (const auto& goal : graph.goals()) {
            if (goal.id == graph.target_goal_id()) {
                doc["goal"] = {{"id", goal.id}, {"label", goal.label}};
                break;
            }
        }
    } else {
        doc["goal"] = nullptr;
    }
    doc["subgoals"] = json::array();
    for (const auto& sg : graph.subgoals()) {
        json entry = {{"id", sg.id}, {"label", sg.label}};
        if (!sg.detection_event.empty()) entry["detection_event"] = sg.detection_event;
        doc["subgoals"].push_back(entry);
    }
    doc["edges"] = json::array();
    for (const auto& goal : graph.goals())
        for (const auto& child : goal.children) doc["edges"].push_back({goal.id, child});
    doc["trajectories"] = json::array();
    for (const auto& [id, node] : graph.trajectories()) {
        json steps = json::array();
        for (const auto& step : node.steps) {
            json st = {{"obs_key", step.obs_key}, {"action", step.action}};
            if (step.position) st["position"] = {step.position->first, step.position->second};
            steps.push_back(st);
        }
        doc["trajectories"].push_back({{"zeta", node.zeta},
                                       {"estimated_reward", node.r_hat},
                                       {"pinned", node.pinned},
                                       {"access_score", node.access_score},
                                       {"origin", origin_name(node.origin)},
                                       {"steps", steps}});
    }
    return doc;
}

}  // namespace memshape
