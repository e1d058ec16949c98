#pragma once

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "httplib.h"
// httplib pulls in <resolv.h>, whose _res macro corrupts Eigen's kernel
// parameter names in any translation unit that includes Eigen afterwards.
#ifdef _res
#undef _res
#endif
#include "json.hpp"
#include "memshape/env.hpp"
#include "memshape/errors.hpp"
#include "memshape/memory_graph.hpp"

namespace memshape {

struct PlanStep {
    enum class Kind { Action, Subgoal };
    Kind kind = Kind::Action;
    std::string value;  // action name or subgoal label
    int action = -1;    // resolved index for action steps
};

enum class PlanMode { AddToGraph, Inject };

struct GuidancePlan {
    int plan_id = 0;
    std::vector<PlanStep> steps;
    PlanMode mode = PlanMode::AddToGraph;
    double beta = 1.0;
    int horizon = 50;       // H: total injected steps before deactivation
    int attempt_budget = 3; // samples per plan step before advancing anyway
    int cursor = 0;
};

// Adaptive-query trigger bookkeeping. All counters stay non-negative.
struct TriggerState {
    int consecutive_starved = 0;
    int cooldown_remaining = 0;
    int queries_issued = 0;
};

// Processes one finished episode: cooldown ticks down first, then the
// starvation streak updates, then the fire condition is checked. With C=10
// and cooldown=20 a permanently starved agent queries at episodes 10, 30, ...
inline bool update_trigger(TriggerState& state, double episode_mean_utility, double u_min,
                           int C, int cooldown) {
    if (state.cooldown_remaining > 0) --state.cooldown_remaining;
    if (episode_mean_utility < u_min)
        ++state.consecutive_starved;
    else
        state.consecutive_starved = 0;
    if (state.consecutive_starved >= C && state.cooldown_remaining == 0) {
        state.consecutive_starved = 0;
        state.cooldown_remaining = cooldown;
        ++state.queries_issued;
        return true;
    }
    return false;
}

// Prompt text limited to what the agent itself can see: recent local view
// renderings, the action legend, and the goal/subgoal vocabulary.
inline std::string build_prompt(const std::vector<std::string>& recent_views,
                                const std::vector<std::string>& action_names,
                                const std::string& goal_label,
                                const std::vector<std::string>& subgoal_labels) {
    if (recent_views.empty()) throw DimensionError("build_prompt: empty observation window");
    std::string prompt =
        "You advise a gridworld agent. You see only what the agent sees: its "
        "recent local views, oldest first.\n\n";
    for (std::size_t i = 0; i < recent_views.size(); ++i)
        prompt += "View " + std::to_string(i + 1) + ":\n" + recent_views[i] + "\n";
    prompt += "\nGoal: " + goal_label + "\n";
    if (!subgoal_labels.empty()) {
        prompt += "Known subgoals:";
        for (const auto& label : subgoal_labels) prompt += " " + label;
        prompt += "\n";
    }
    prompt += "Actions:";
    for (const auto& name : action_names) prompt += " " + name;
    prompt +=
        "\n\nReply with one directive per line, nothing else:\n"
        "MODE: add|inject\n"
        "SUBGOAL: <subgoal label>\n"
        "STEP: <action name>\n";
    return prompt;
}

struct ParseResult {
    bool ok = false;
    std::string error;
    GuidancePlan plan;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

// Line-oriented plan grammar: `MODE: add|inject`, `SUBGOAL: <label>`,
// `STEP: <action name>`. Unrecognized lines are ignored (replies may wrap the
// plan in prose). Failures are values, never exceptions: unknown action or
// subgoal names, a bad mode, zero steps, or subgoal steps in inject mode.
inline ParseResult parse_plan(const std::string& reply,
                              const std::vector<std::string>& action_names,
                              const std::vector<std::string>& subgoal_labels,
                              double beta = 1.0, int horizon = 50, int attempt_budget = 3) {
    ParseResult result;
    result.plan.beta = beta;
    result.plan.horizon = horizon;
    result.plan.attempt_budget = attempt_budget;
    bool mode_set = false;

    std::size_t pos = 0;
    while (pos <= reply.size()) {
        const std::size_t eol = reply.find('\n', pos);
        const std::string line =
            detail::trim(reply.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos));
        pos = eol == std::string::npos ? reply.size() + 1 : eol + 1;
        if (line.empty()) continue;
        if (line.rfind("MODE:", 0) == 0) {
            const std::string value = detail::trim(line.substr(5));
            if (value == "add") result.plan.mode = PlanMode::AddToGraph;
            else if (value == "inject") result.plan.mode = PlanMode::Inject;
            else {
                result.error = "unknown mode: " + value;
                return result;
            }
            mode_set = true;
        } else if (line.rfind("STEP:", 0) == 0) {
            const std::string value = detail::trim(line.substr(5));
            auto it = std::find(action_names.begin(), action_names.end(), value);
            if (it == action_names.end()) {
                result.error = "unknown action name: " + value;
                return result;
            }
            PlanStep step;
            step.kind = PlanStep::Kind::Action;
            step.value = value;
            step.action = static_cast<int>(it - action_names.begin());
            result.plan.steps.push_back(std::move(step));
        } else if (line.rfind("SUBGOAL:", 0) == 0) {
            const std::string value = detail::trim(line.substr(8));
            if (std::find(subgoal_labels.begin(), subgoal_labels.end(), value) ==
                subgoal_labels.end()) {
                result.error = "unknown subgoal label: " + value;
                return result;
            }
            PlanStep step;
            step.kind = PlanStep::Kind::Subgoal;
            step.value = value;
            result.plan.steps.push_back(std::move(step));
        }
        // other lines: prose, ignored
    }
    (void)mode_set;
    if (result.plan.steps.empty()) {
        result.error = "plan has no steps";
        return result;
    }
    if (result.plan.mode == PlanMode::Inject) {
        for (const auto& step : result.plan.steps) {
            if (step.kind == PlanStep::Kind::Subgoal) {
                result.error = "subgoal step in inject mode: " + step.value;
                return result;
            }
        }
    }
    result.ok = true;
    return result;
}

// Adds beta*(1 - cursor/H) to the suggested action's logit; everything else
// untouched. Inactive plans (cursor at the end) change nothing.
inline void inject_logits(Eigen::VectorXd& logits, const GuidancePlan& plan, double beta) {
    if (plan.cursor >= static_cast<int>(plan.steps.size())) return;
    const PlanStep& step = plan.steps[plan.cursor];
    if (step.kind != PlanStep::Kind::Action) return;
    if (step.action < 0 || step.action >= logits.size()) return;
    logits(step.action) += beta * (1.0 - static_cast<double>(plan.cursor) / plan.horizon);
}

// Single active inject-mode plan; a newly applied plan replaces the old one.
// The cursor advances when the sampled action matches the suggestion or once
// the per-step attempt budget runs out; the plan dies at cursor = |steps| or
// after H injected steps.
class ActiveInjection {
public:
    void activate(GuidancePlan plan) {
        plan_ = std::move(plan);
        plan_->cursor = 0;
        attempts_ = 0;
        total_steps_ = 0;
    }
    bool active() const { return plan_.has_value(); }
    const GuidancePlan* plan() const { return plan_ ? &*plan_ : nullptr; }
    void deactivate() { plan_.reset(); }

    void apply(Eigen::VectorXd& logits) {
        if (!plan_) return;
        inject_logits(logits, *plan_, plan_->beta);
    }

    void observe_action(int action) {
        if (!plan_) return;
        ++total_steps_;
        const PlanStep& step = plan_->steps[plan_->cursor];
        if (step.kind != PlanStep::Kind::Action || action == step.action ||
            ++attempts_ >= plan_->attempt_budget) {
            ++plan_->cursor;
            attempts_ = 0;
        }
        if (plan_->cursor >= static_cast<int>(plan_->steps.size()) ||
            total_steps_ >= plan_->horizon)
            deactivate();
    }

private:
    std::optional<GuidancePlan> plan_;
    int attempts_ = 0;
    int total_steps_ = 0;
};

enum class PlanEffect { AddedNode, InjectorActive, NoEffect };

// Grounds an add-mode plan against the recent observation window: the first k
// action steps pair with the last k window anchors in order (surplus plan
// steps are dropped), and the node's goal term is the plan's last subgoal,
// falling back to the target goal. Inject-mode plans replace the active
// injector and leave the graph unchanged.
inline PlanEffect apply_plan(GuidancePlan plan, MemoryGraph& graph,
                             const std::vector<std::pair<std::string, std::optional<GridPos>>>& anchors,
                             ActiveInjection& injection, double llm_r_hat = 1.0) {
    if (plan.mode == PlanMode::Inject) {
        injection.activate(std::move(plan));
        return PlanEffect::InjectorActive;
    }
    std::string zeta;
    std::vector<const PlanStep*> action_steps;
    for (const auto& step : plan.steps) {
        if (step.kind == PlanStep::Kind::Subgoal) {
            auto id = graph.subgoal_id_by_label(step.value);
            if (!id) throw FormatError("dangling subgoal reference: " + step.value);
            zeta = *id;
        } else {
            action_steps.push_back(&step);
        }
    }
    if (zeta.empty()) {
        if (graph.target_goal_id().empty()) graph.add_goal("goal", "goal", true);
        zeta = graph.target_goal_id();
    }
    const std::size_t k = std::min(action_steps.size(), anchors.size());
    if (k == 0) return PlanEffect::NoEffect;
    std::vector<TrajStep> steps;
    const std::size_t anchor_base = anchors.size() - k;
    for (std::size_t i = 0; i < k; ++i) {
        TrajStep st;
        st.obs_key = anchors[anchor_base + i].first;
        st.position = anchors[anchor_base + i].second;
        st.action = action_steps[i]->action;
        steps.push_back(std::move(st));
    }
    graph.add_trajectory(std::move(steps), zeta, llm_r_hat, NodeOrigin::OnlineLlm, false);
    return PlanEffect::AddedNode;
}

// Blocking guidance backends. Failures are soft: nullopt means "no usable
// reply", and training continues unguided.
class GuidanceProvider {
public:
    virtual ~GuidanceProvider() = default;
    virtual std::optional<std::string> query(const std::string& prompt) = 0;
    virtual std::string name() const = 0;
};

// Deterministic test double: canned replies in order, repeating the last.
class MockProvider : public GuidanceProvider {
public:
    explicit MockProvider(std::vector<std::string> script) : script_(std::move(script)) {
        if (script_.empty()) throw ConfigError("mock provider: empty script");
    }
    std::optional<std::string> query(const std::string& prompt) override {
        prompts_.push_back(prompt);
        const std::size_t i = std::min(next_, script_.size() - 1);
        ++next_;
        return script_[i];
    }
    std::string name() const override { return "mock"; }
    const std::vector<std::string>& prompts() const { return prompts_; }

private:
    std::vector<std::string> script_;
    std::vector<std::string> prompts_;
    std::size_t next_ = 0;
};

// OpenAI-compatible chat-completions endpoint. Base URL and bearer token come
// from MEMSHAPE_LLM_BASE_URL / MEMSHAPE_LLM_API_KEY unless given explicitly.
class HttpProvider : public GuidanceProvider {
public:
    explicit HttpProvider(std::string base_url = "", std::string api_key = "",
                          std::string model = "gpt-4o-mini", double temperature = 0.0,
                          int timeout_seconds = 30)
        : base_url_(std::move(base_url)),
          api_key_(std::move(api_key)),
          model_(std::move(model)),
          temperature_(temperature),
          timeout_seconds_(timeout_seconds) {
        if (base_url_.empty()) {
            const char* env = std::getenv("MEMSHAPE_LLM_BASE_URL");
            if (env) base_url_ = env;
        }
        if (api_key_.empty()) {
            const char* env = std::getenv("MEMSHAPE_LLM_API_KEY");
            if (env) api_key_ = env;
        }
        if (base_url_.empty())
            throw ConfigError("http provider: no base URL (set MEMSHAPE_LLM_BASE_URL)");
        split_base(base_url_, host_, path_prefix_);
    }

    std::optional<std::string> query(const std::string& prompt) override {
        httplib::Client client(host_);
        client.set_connection_timeout(timeout_seconds_, 0);
        client.set_read_timeout(timeout_seconds_, 0);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        nlohmann::json body = {
            {"model", model_},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", temperature_}};
        auto res = client.Post(path_prefix_ + "/v1/chat/completions", headers, body.dump(),
                               "application/json");
        if (!res || res->status != 200) return std::nullopt;
        nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, false);
        if (doc.is_discarded()) return std::nullopt;
        if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty())
            return std::nullopt;
        const nlohmann::json& msg = doc["choices"][0];
        if (!msg.contains("message") || !msg["message"].contains("content") ||
            !msg["message"]["content"].is_string())
            return std::nullopt;
        return msg["message"]["content"].get<std::string>();
    }
    std::string name() const override { return "http"; }

private:
    // "http://host:port/prefix" -> client target "http://host:port" + "/prefix".
    static void split_base(const std::string& url, std::string& host, std::string& prefix) {
        const std::size_t scheme = url.find("://");
        const std::size_t path_start =
            url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        if (path_start == std::string::npos) {
            host = url;
            prefix = "";
        } else {
            host = url.substr(0, path_start);
            prefix = url.substr(path_start);
            while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
        }
    }

    std::string base_url_, api_key_, model_;
    double temperature_;
    int timeout_seconds_;
    std::string host_, path_prefix_;
};

}  // namespace memshape
