#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "memshape/checkpoint.hpp"
#include "memshape/doorkey.hpp"
#include "memshape/env.hpp"
#include "memshape/errors.hpp"
#include "memshape/guidance.hpp"
#include "memshape/memory_graph.hpp"
#include "memshape/ppo.hpp"
#include "memshape/rng.hpp"
#include "memshape/rollout.hpp"
#include "memshape/utility.hpp"

namespace memshape {

// Flat-key experiment configuration. Sentinels: horizon/insert_success_threshold
// <= 0 resolve to per-environment defaults before validation.
struct ExperimentConfig {
    std::string env = "frozenlake8x8";
    bool slippery = true;
    int grid_size = 6;
    std::uint64_t seed = 0;
    long long total_steps = 150000;
    int horizon = 0;
    int hidden_size = 64;
    double gamma = 0.99;
    double lambda = 0.95;
    double clip_eps = 0.2;
    int epochs = 4;
    int minibatch_size = 64;
    double entropy_coef = 0.01;
    double value_coef = 0.5;
    bool normalize_advantages = true;
    double actor_lr = 3e-4;
    double critic_lr = 1e-3;
    bool shaping_enabled = true;
    double xi0 = 0.5;
    double xi_min = 0.01;
    int decay_horizon = 50;
    int graph_capacity = 256;
    double graph_decay = 0.99;
    bool insert_enabled = true;
    double insert_success_threshold = 0.0;  // <= 0: auto per env
    double novelty_threshold = 0.5;
    std::string prior_path;
    std::string llm_provider = "off";  // off | mock | http
    std::string llm_script_path;
    std::string llm_model = "gpt-4o-mini";
    double llm_temperature = 0.0;
    double u_min = 0.05;
    int trigger_c = 10;
    int trigger_cooldown = 20;
    double beta = 1.0;
    int guidance_horizon = 50;
    int attempt_budget = 3;
    double llm_r_hat = 1.0;
    int view_window = 8;
    bool allow_concurrent_guidance = true;
    int eval_episodes = 100;
    std::string out_dir = "runs/run";

    void resolve() {
        if (horizon <= 0) horizon = env == "doorkey" ? 4096 : 2048;
        if (insert_success_threshold <= 0.0)
            insert_success_threshold = env == "doorkey" ? 1e-9 : 1.0;
    }

    void validate() const {
        if (env != "frozenlake8x8" && env != "doorkey")
            throw ConfigError("unknown env: " + env);
        if (total_steps <= 0) throw ConfigError("total_steps must be > 0");
        if (horizon <= 0) throw ConfigError("horizon must be > 0");
        if (gamma <= 0.0 || gamma > 1.0) throw ConfigError("gamma must be in (0,1]");
        if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0,1]");
        if (clip_eps <= 0.0 || clip_eps >= 1.0) throw ConfigError("clip_eps must be in (0,1)");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (minibatch_size < 1) throw ConfigError("minibatch_size must be >= 1");
        if (hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
        if (xi0 <= 0.0 || xi0 > 1.0) throw ConfigError("xi0 must be in (0,1]");
        if (xi_min <= 0.0 || xi_min > xi0) throw ConfigError("xi_min must be in (0, xi0]");
        if (decay_horizon < 1) throw ConfigError("decay_horizon must be >= 1");
        if (graph_capacity < 1) throw ConfigError("graph_capacity must be >= 1");
        if (graph_decay <= 0.0 || graph_decay > 1.0) throw ConfigError("graph_decay must be in (0,1]");
        if (novelty_threshold <= 0.0 || novelty_threshold > 1.0)
            throw ConfigError("novelty_threshold must be in (0,1]");
        if (llm_provider != "off" && llm_provider != "mock" && llm_provider != "http")
            throw ConfigError("llm_provider must be off, mock, or http");
        if (llm_provider == "mock" && llm_script_path.empty())
            throw ConfigError("mock provider needs llm_script_path");
        if (!prior_path.empty() && !std::filesystem::exists(prior_path))
            throw ConfigError("prior file not found: " + prior_path);
        if (llm_provider == "mock" && !std::filesystem::exists(llm_script_path))
            throw ConfigError("llm script not found: " + llm_script_path);
        if (trigger_c < 1) throw ConfigError("trigger_c must be >= 1");
        if (trigger_cooldown < 0) throw ConfigError("trigger_cooldown must be >= 0");
        if (guidance_horizon < 1) throw ConfigError("guidance_horizon must be >= 1");
        if (attempt_budget < 1) throw ConfigError("attempt_budget must be >= 1");
        if (view_window < 1) throw ConfigError("view_window must be >= 1");
        if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
        if (grid_size < 5) throw ConfigError("grid_size must be >= 5");
    }
};

namespace detail {

inline bool json_bool(const nlohmann::json& v, const std::string& key) {
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s == "true" || s == "on" || s == "1") return true;
        if (s == "false" || s == "off" || s == "0") return false;
    }
    if (v.is_number_integer()) return v.get<long long>() != 0;
    throw ConfigError("config key '" + key + "' expects a boolean");
}

inline double json_double(const nlohmann::json& v, const std::string& key) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        try {
            std::size_t used = 0;
            const std::string s = v.get<std::string>();
            const double d = std::stod(s, &used);
            if (used == s.size()) return d;
        } catch (const std::exception&) {
        }
    }
    throw ConfigError("config key '" + key + "' expects a number");
}

inline long long json_int(const nlohmann::json& v, const std::string& key) {
    if (v.is_number_integer()) return v.get<long long>();
    if (v.is_string()) {
        try {
            std::size_t used = 0;
            const std::string s = v.get<std::string>();
            const long long i = std::stoll(s, &used);
            if (used == s.size()) return i;
        } catch (const std::exception&) {
        }
    }
    throw ConfigError("config key '" + key + "' expects an integer");
}

inline std::string json_string(const nlohmann::json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    throw ConfigError("config key '" + key + "' expects a string");
}

}  // namespace detail

inline void config_set_key(ExperimentConfig& cfg, const std::string& key, const nlohmann::json& v) {
    using namespace detail;
    if (key == "env") cfg.env = json_string(v, key);
    else if (key == "slippery") cfg.slippery = json_bool(v, key);
    else if (key == "grid_size") cfg.grid_size = static_cast<int>(json_int(v, key));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(json_int(v, key));
    else if (key == "total_steps") cfg.total_steps = json_int(v, key);
    else if (key == "horizon") cfg.horizon = static_cast<int>(json_int(v, key));
    else if (key == "hidden_size") cfg.hidden_size = static_cast<int>(json_int(v, key));
    else if (key == "gamma") cfg.gamma = json_double(v, key);
    else if (key == "lambda") cfg.lambda = json_double(v, key);
    else if (key == "clip_eps") cfg.clip_eps = json_double(v, key);
    else if (key == "epochs") cfg.epochs = static_cast<int>(json_int(v, key));
    else if (key == "minibatch_size") cfg.minibatch_size = static_cast<int>(json_int(v, key));
    else if (key == "entropy_coef") cfg.entropy_coef = json_double(v, key);
    else if (key == "value_coef") cfg.value_coef = json_double(v, key);
    else if (key == "normalize_advantages") cfg.normalize_advantages = json_bool(v, key);
    else if (key == "actor_lr") cfg.actor_lr = json_double(v, key);
    else if (key == "critic_lr") cfg.critic_lr = json_double(v, key);
    else if (key == "shaping_enabled") cfg.shaping_enabled = json_bool(v, key);
    else if (key == "xi0") cfg.xi0 = json_double(v, key);
    else if (key == "xi_min") cfg.xi_min = json_double(v, key);
    else if (key == "decay_horizon") cfg.decay_horizon = static_cast<int>(json_int(v, key));
    else if (key == "graph_capacity") cfg.graph_capacity = static_cast<int>(json_int(v, key));
    else if (key == "graph_decay") cfg.graph_decay = json_double(v, key);
    else if (key == "insert_enabled") cfg.insert_enabled = json_bool(v, key);
    else if (key == "insert_success_threshold") cfg.insert_success_threshold = json_double(v, key);
    else if (key == "novelty_threshold") cfg.novelty_threshold = json_double(v, key);
    else if (key == "prior_path") cfg.prior_path = json_string(v, key);
    else if (key == "llm_provider") cfg.llm_provider = json_string(v, key);
    else if (key == "llm_script_path") cfg.llm_script_path = json_string(v, key);
    else if (key == "llm_model") cfg.llm_model = json_string(v, key);
    else if (key == "llm_temperature") cfg.llm_temperature = json_double(v, key);
    else if (key == "u_min") cfg.u_min = json_double(v, key);
    else if (key == "trigger_c") cfg.trigger_c = static_cast<int>(json_int(v, key));
    else if (key == "trigger_cooldown") cfg.trigger_cooldown = static_cast<int>(json_int(v, key));
    else if (key == "beta") cfg.beta = json_double(v, key);
    else if (key == "guidance_horizon") cfg.guidance_horizon = static_cast<int>(json_int(v, key));
    else if (key == "attempt_budget") cfg.attempt_budget = static_cast<int>(json_int(v, key));
    else if (key == "llm_r_hat") cfg.llm_r_hat = json_double(v, key);
    else if (key == "view_window") cfg.view_window = static_cast<int>(json_int(v, key));
    else if (key == "allow_concurrent_guidance") cfg.allow_concurrent_guidance = json_bool(v, key);
    else if (key == "eval_episodes") cfg.eval_episodes = static_cast<int>(json_int(v, key));
    else if (key == "out_dir") cfg.out_dir = json_string(v, key);
    else throw ConfigError("unknown config key: " + key);
}

inline void config_apply_json(ExperimentConfig& cfg, const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("config file must contain a JSON object");
    for (auto it = doc.begin(); it != doc.end(); ++it) config_set_key(cfg, it.key(), it.value());
}

inline void config_load_file(ExperimentConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
    config_apply_json(cfg, doc);
}

// "--set key=value" style override; value parsed as JSON when possible so
// numbers and booleans work, otherwise taken as a raw string.
inline void config_apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must be key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
    if (v.is_discarded() || v.is_object() || v.is_array()) v = raw;
    config_set_key(cfg, key, v);
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    return nlohmann::json{{"env", cfg.env},
                          {"slippery", cfg.slippery},
                          {"grid_size", cfg.grid_size},
                          {"seed", cfg.seed},
                          {"total_steps", cfg.total_steps},
                          {"horizon", cfg.horizon},
                          {"hidden_size", cfg.hidden_size},
                          {"gamma", cfg.gamma},
                          {"lambda", cfg.lambda},
                          {"clip_eps", cfg.clip_eps},
                          {"epochs", cfg.epochs},
                          {"minibatch_size", cfg.minibatch_size},
                          {"entropy_coef", cfg.entropy_coef},
                          {"value_coef", cfg.value_coef},
                          {"normalize_advantages", cfg.normalize_advantages},
                          {"actor_lr", cfg.actor_lr},
                          {"critic_lr", cfg.critic_lr},
                          {"shaping_enabled", cfg.shaping_enabled},
                          {"xi0", cfg.xi0},
                          {"xi_min", cfg.xi_min},
                          {"decay_horizon", cfg.decay_horizon},
                          {"graph_capacity", cfg.graph_capacity},
                          {"graph_decay", cfg.graph_decay},
                          {"insert_enabled", cfg.insert_enabled},
                          {"insert_success_threshold", cfg.insert_success_threshold},
                          {"novelty_threshold", cfg.novelty_threshold},
                          {"prior_path", cfg.prior_path},
                          {"llm_provider", cfg.llm_provider},
                          {"llm_script_path", cfg.llm_script_path},
                          {"llm_model", cfg.llm_model},
                          {"llm_temperature", cfg.llm_temperature},
                          {"u_min", cfg.u_min},
                          {"trigger_c", cfg.trigger_c},
                          {"trigger_cooldown", cfg.trigger_cooldown},
                          {"beta", cfg.beta},
                          {"guidance_horizon", cfg.guidance_horizon},
                          {"attempt_budget", cfg.attempt_budget},
                          {"llm_r_hat", cfg.llm_r_hat},
                          {"view_window", cfg.view_window},
                          {"allow_concurrent_guidance", cfg.allow_concurrent_guidance},
                          {"eval_episodes", cfg.eval_episodes},
                          {"out_dir", cfg.out_dir}};
}

inline std::unique_ptr<GuidanceProvider> make_provider(const ExperimentConfig& cfg) {
    if (cfg.llm_provider == "off") return nullptr;
    if (cfg.llm_provider == "mock") {
        std::ifstream in(cfg.llm_script_path);
        if (!in) throw ConfigError("cannot open llm script: " + cfg.llm_script_path);
        nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
        if (doc.is_discarded() || !doc.is_array())
            throw ConfigError("llm script must be a JSON list of strings: " + cfg.llm_script_path);
        std::vector<std::string> script;
        for (const auto& entry : doc) {
            if (!entry.is_string())
                throw ConfigError("llm script entries must be strings: " + cfg.llm_script_path);
            script.push_back(entry.get<std::string>());
        }
        return std::make_unique<MockProvider>(std::move(script));
    }
    return std::make_unique<HttpProvider>("", "", cfg.llm_model, cfg.llm_temperature);
}

inline constexpr const char* kMetricsHeader =
    "iteration,env_steps,mean_return,success_rate,mean_u,max_u,xi,clip_fraction,approx_kl,"
    "graph_size,llm_queries";

namespace detail {

inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline double trailing_mean(const std::vector<double>& values, std::size_t end_index,
                            std::size_t window) {
    const std::size_t hi = end_index + 1;
    const std::size_t lo = hi > window ? hi - window : 0;
    double sum = 0.0;
    for (std::size_t i = lo; i < hi; ++i) sum += values[i];
    return sum / static_cast<double>(hi - lo);
}

}  // namespace detail

struct TrainResult {
    std::string run_dir;
    int iterations = 0;
    long long env_steps = 0;
    int llm_queries = 0;
    int parse_failures = 0;
    double final_trailing_return = 0.0;
    double final_trailing_success = 0.0;
    std::size_t graph_size = 0;
};

// One training run. Writes config.echo.json, metrics.csv, timing.csv,
// checkpoint_final, and graph_final.json into cfg.out_dir. With the guidance
// provider off and shaping off (or an empty, insert-disabled graph) the run is
// bitwise deterministic in (config, seed).
inline TrainResult run_train(const ExperimentConfig& config, GuidanceProvider* provider = nullptr) {
    ExperimentConfig cfg = config;
    cfg.resolve();
    cfg.validate();

    std::unique_ptr<GuidanceProvider> owned;
    if (!provider && cfg.llm_provider != "off") {
        owned = make_provider(cfg);
        provider = owned.get();
    }

    std::filesystem::create_directories(cfg.out_dir);
    {
        std::ofstream echo(cfg.out_dir + "/config.echo.json");
        echo << config_to_json(cfg).dump(2) << "\n";
    }

    std::unique_ptr<Env> env = make_env(cfg.env, cfg.slippery, cfg.grid_size);
    env->seed(cfg.seed);
    std::mt19937_64 policy_rng = make_rng(cfg.seed, 0x706f6cULL);
    std::mt19937_64 update_rng = make_rng(cfg.seed, 0x757064ULL);

    PolicyParams params =
        init_policy(env->feature_size(), env->action_count(), cfg.hidden_size, cfg.seed);

    const bool memory_active = cfg.shaping_enabled || provider != nullptr;
    MemoryGraph graph(cfg.graph_capacity, cfg.graph_decay);
    if (!cfg.prior_path.empty()) {
        std::ifstream in(cfg.prior_path);
        if (!in) throw ConfigError("cannot open prior file: " + cfg.prior_path);
        nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
        if (doc.is_discarded()) throw FormatError("prior file is not valid JSON: " + cfg.prior_path);
        const ObsKeyDeriver deriver =
            cfg.env == "frozenlake8x8" ? frozenlake_key_deriver() : ObsKeyDeriver{};
        graph = load_priors(doc, cfg.graph_capacity, cfg.graph_decay, deriver);
    }

    PpoConfig ppo;
    ppo.gamma = cfg.gamma;
    ppo.lambda = cfg.lambda;
    ppo.clip_eps = cfg.clip_eps;
    ppo.epochs = cfg.epochs;
    ppo.minibatch_size = cfg.minibatch_size;
    ppo.horizon = cfg.horizon;
    ppo.entropy_coef = cfg.entropy_coef;
    ppo.value_coef = cfg.value_coef;
    ppo.normalize_advantages = cfg.normalize_advantages;
    ppo.actor_lr = cfg.actor_lr;
    ppo.critic_lr = cfg.critic_lr;
    ppo.xi0 = cfg.xi0;
    ppo.xi_min = cfg.xi_min;
    ppo.decay_horizon = cfg.decay_horizon;

    std::ofstream metrics(cfg.out_dir + "/metrics.csv");
    std::ofstream timing(cfg.out_dir + "/timing.csv");
    metrics << kMetricsHeader << "\n";
    timing << "iteration,wall_ms\n";

    // Per-episode state carried across rollout boundaries.
    struct EpisodeCarry {
        std::vector<TrajStep> steps;
        double ret = 0.0;
        double usum = 0.0;
        void reset() {
            steps.clear();
            ret = 0.0;
            usum = 0.0;
        }
    } carry;
    struct FinishedEpisode {
        std::vector<TrajStep> steps;
        double ret = 0.0;
        double mean_u = 0.0;
        bool success = false;
    };

    MatchState match_state;
    TriggerState trigger;
    ActiveInjection injection;
    struct WindowEntry {
        std::string view, obs_key;
        std::optional<GridPos> position;
    };
    std::deque<WindowEntry> window;
    std::vector<std::uint8_t> injected_at_step;
    const bool capture_views = provider != nullptr;

    CollectHooks hooks;
    hooks.on_logits = [&](const Observation& obs, Eigen::VectorXd& logits) {
        injected_at_step.push_back(injection.active() ? 1 : 0);
        if (capture_views) {
            window.push_back({env->render_view(), obs.key, env->agent_position()});
            while (window.size() > static_cast<std::size_t>(cfg.view_window)) window.pop_front();
        }
        injection.apply(logits);
    };
    hooks.on_action = [&](int action) { injection.observe_action(action); };

    Observation current = env->reset();
    std::vector<double> per_iter_return, per_iter_success;
    double last_mean_return = 0.0, last_success = 0.0;
    TrainResult result;
    result.run_dir = cfg.out_dir;

    const int iterations =
        static_cast<int>((cfg.total_steps + cfg.horizon - 1) / cfg.horizon);
    for (int iter = 0; iter < iterations; ++iter) {
        const auto t0 = std::chrono::steady_clock::now();
        injected_at_step.clear();
        Rollout rollout = collect_rollout(params, *env, cfg.horizon, policy_rng, current, &hooks);

        UtilityTrace trace;
        if (memory_active) {
            trace = compute_utility(graph, rollout, match_state, env->position_scale());
            if (!cfg.allow_concurrent_guidance) {
                for (int t = 0; t < rollout.steps(); ++t)
                    if (injected_at_step[t]) {
                        rollout.utility[t] = 0.0;
                        trace.steps[t] = UtilityStep{};
                    }
            }
        } else {
            trace.steps.resize(rollout.steps());
        }

        // Episode bookkeeping, spanning rollout boundaries via the carry.
        std::vector<FinishedEpisode> finished;
        for (const auto& [a, b] : episode_ranges(rollout)) {
            for (int t = a; t < b; ++t) {
                TrajStep step;
                step.obs_key = rollout.obs_keys[t];
                step.position = rollout.positions[t];
                step.action = rollout.actions[t];
                carry.steps.push_back(std::move(step));
                carry.ret += rollout.rewards[t];
                carry.usum += rollout.utility[t];
            }
            if (rollout.done[b - 1]) {
                FinishedEpisode ep;
                ep.steps = std::move(carry.steps);
                ep.ret = carry.ret;
                ep.mean_u = carry.usum / static_cast<double>(ep.steps.size());
                ep.success = rollout.rewards[b - 1] > 0.0;
                finished.push_back(std::move(ep));
                carry.reset();
            }
        }

        auto [advantages, returns] =
            compute_gae(rollout.rewards, rollout.values, rollout.done, rollout.bootstrap_value,
                        cfg.gamma, cfg.lambda);
        const double xi = xi_schedule(iter, ppo);
        ShapedBatch batch = shape_advantages(advantages, returns, rollout.utility, xi,
                                             cfg.shaping_enabled, cfg.normalize_advantages);
        UpdateStats stats = ppo_update(rollout, batch, params, ppo, update_rng);

        if (memory_active) {
            if (cfg.insert_enabled)
                for (const auto& ep : finished)
                    graph.insert_rollout(ep.steps, ep.ret, cfg.insert_success_threshold,
                                         cfg.novelty_threshold);
            graph.prune();
        }

        if (provider) {
            for (const auto& ep : finished) {
                if (!update_trigger(trigger, ep.mean_u, cfg.u_min, cfg.trigger_c,
                                    cfg.trigger_cooldown))
                    continue;
                if (window.empty()) continue;
                std::vector<std::string> views;
                std::vector<std::pair<std::string, std::optional<GridPos>>> anchors;
                for (const auto& entry : window) {
                    views.push_back(entry.view);
                    anchors.emplace_back(entry.obs_key, entry.position);
                }
                std::string goal_label = cfg.env;
                for (const auto& goal : graph.goals())
                    if (goal.id == graph.target_goal_id()) goal_label = goal.label;
                const std::string prompt =
                    build_prompt(views, env->action_names(), goal_label, graph.subgoal_labels());
                const auto reply = provider->query(prompt);
                if (!reply) {
                    ++result.parse_failures;
                    continue;
                }
                ParseResult parsed =
                    parse_plan(*reply, env->action_names(), graph.subgoal_labels(), cfg.beta,
                               cfg.guidance_horizon, cfg.attempt_budget);
                if (!parsed.ok) {
                    ++result.parse_failures;
                    continue;
                }
                parsed.plan.plan_id = trigger.queries_issued;
                apply_plan(std::move(parsed.plan), graph, anchors, injection, cfg.llm_r_hat);
            }
        }

        double max_u = 0.0, mean_u = 0.0;
        for (double u : rollout.utility) {
            mean_u += u;
            if (u > max_u) max_u = u;
        }
        mean_u /= rollout.steps();
        if (!finished.empty()) {
            double ret_sum = 0.0, succ_sum = 0.0;
            for (const auto& ep : finished) {
                ret_sum += ep.ret;
                succ_sum += ep.success ? 1.0 : 0.0;
            }
            last_mean_return = ret_sum / finished.size();
            last_success = succ_sum / finished.size();
        }
        per_iter_return.push_back(last_mean_return);
        per_iter_success.push_back(last_success);

        const long long env_steps = static_cast<long long>(iter + 1) * cfg.horizon;
        const std::size_t graph_size =
            graph.trajectory_count() + graph.subgoal_count() + graph.goal_count();
        metrics << iter << ',' << env_steps << ',' << detail::fmt6(last_mean_return) << ','
                << detail::fmt6(last_success) << ',' << detail::fmt6(mean_u) << ','
                << detail::fmt6(max_u) << ',' << detail::fmt6(xi) << ','
                << detail::fmt6(stats.clip_fraction) << ',' << detail::fmt6(stats.approx_kl) << ','
                << graph_size << ',' << trigger.queries_issued << "\n";
        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        timing << iter << ',' << detail::fmt6(wall_ms) << "\n";
        result.iterations = iter + 1;
        result.env_steps = env_steps;
    }

    metrics.close();
    timing.close();
    save_policy(cfg.out_dir + "/checkpoint_final", params, env->id(), cfg.seed);
    {
        std::ofstream gout(cfg.out_dir + "/graph_final.json");
        gout << graph_to_json(graph).dump(2) << "\n";
    }
    result.llm_queries = trigger.queries_issued;
    result.graph_size = graph.trajectory_count() + graph.subgoal_count() + graph.goal_count();
    if (!per_iter_return.empty()) {
        result.final_trailing_return =
            detail::trailing_mean(per_iter_return, per_iter_return.size() - 1, 5);
        result.final_trailing_success =
            detail::trailing_mean(per_iter_success, per_iter_success.size() - 1, 5);
    }
    return result;
}

struct SeedEval {
    std::uint64_t seed = 0;
    double mean_return = 0.0;
    double success_rate = 0.0;
    int episodes = 0;
};

struct EvalReport {
    double mean_return = 0.0;
    double return_std = 0.0;
    double success_rate = 0.0;
    double success_std = 0.0;
    std::vector<SeedEval> per_seed;

    nlohmann::json to_json() const {
        nlohmann::json doc = {{"mean_return", mean_return},
                              {"return_std", return_std},
                              {"success_rate", success_rate},
                              {"success_std", success_std},
                              {"per_seed", nlohmann::json::array()}};
        for (const auto& s : per_seed)
            doc["per_seed"].push_back({{"seed", s.seed},
                                       {"mean_return", s.mean_return},
                                       {"success_rate", s.success_rate},
                                       {"episodes", s.episodes}});
        return doc;
    }
};

// Greedy evaluation of a checkpoint on unseen seeds: argmax actions, no
// shaping, no guidance, nothing mutated. Seeds overlapping the checkpoint's
// training seed are rejected.
inline EvalReport run_eval(const std::string& checkpoint_path,
                           const std::vector<std::uint64_t>& seeds, int episodes,
                           bool slippery = true, int grid_size = 6) {
    if (seeds.empty()) throw ConfigError("eval needs at least one seed");
    if (episodes < 1) throw ConfigError("eval needs at least one episode");
    const PolicyCheckpoint ckpt = load_policy(checkpoint_path);
    for (std::uint64_t s : seeds)
        if (s == ckpt.train_seed)
            throw ConfigError("eval seed " + std::to_string(s) + " overlaps the training seed");

    std::unique_ptr<Env> env = make_env(ckpt.env_id, slippery, grid_size);
    EvalReport report;
    std::vector<double> all_returns;
    std::vector<double> all_success;
    const int base = episodes / static_cast<int>(seeds.size());
    const int extra = episodes % static_cast<int>(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const int n = base + (static_cast<int>(i) < extra ? 1 : 0);
        if (n == 0) continue;
        env->seed(seeds[i]);
        SeedEval per;
        per.seed = seeds[i];
        per.episodes = n;
        for (int e = 0; e < n; ++e) {
            Observation obs = env->reset();
            double ret = 0.0;
            double terminal_reward = 0.0;
            bool done = false;
            while (!done) {
                const Eigen::VectorXd logits = ckpt.params.actor.forward1(obs.features);
                int action = 0;
                logits.maxCoeff(&action);
                const StepResult step = env->step(action);
                ret += step.reward;
                terminal_reward = step.reward;
                done = step.done;
                obs = step.observation;
            }
            const double success = terminal_reward > 0.0 ? 1.0 : 0.0;
            all_returns.push_back(ret);
            all_success.push_back(success);
            per.mean_return += ret;
            per.success_rate += success;
        }
        per.mean_return /= n;
        per.success_rate /= n;
        report.per_seed.push_back(per);
    }
    const auto mean_std = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= xs.size();
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        return std::pair<double, double>(mean, std::sqrt(var / xs.size()));
    };
    std::tie(report.mean_return, report.return_std) = mean_std(all_returns);
    std::tie(report.success_rate, report.success_std) = mean_std(all_success);
    return report;
}

// metrics.csv reader: enforces the exact header, returns the two columns the
// comparison tools need.
struct MetricsSeries {
    std::vector<long long> env_steps;
    std::vector<double> mean_return;
};

inline MetricsSeries read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open metrics file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty metrics file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMetricsHeader)
        throw FormatError("metrics schema mismatch in " + path + ": " + line);
    MetricsSeries series;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 11)
            throw FormatError("bad metrics row in " + path + ": " + line);
        try {
            series.env_steps.push_back(std::stoll(cells[1]));
            series.mean_return.push_back(std::stod(cells[2]));
        } catch (const std::exception&) {
            throw FormatError("bad metrics row in " + path + ": " + line);
        }
    }
    if (series.env_steps.empty()) throw FormatError("metrics file has no rows: " + path);
    return series;
}

// First env_steps whose trailing-5-row mean return reaches the threshold;
// +infinity when the run never gets there.
inline double steps_to_threshold(const MetricsSeries& series, double threshold) {
    for (std::size_t i = 0; i < series.mean_return.size(); ++i) {
        if (detail::trailing_mean(series.mean_return, i, 5) >= threshold)
            return static_cast<double>(series.env_steps[i]);
    }
    return std::numeric_limits<double>::infinity();
}

struct CompareResult {
    double steps_a = 0.0;
    double steps_b = 0.0;
};

inline CompareResult compare_runs(const std::string& csv_a, const std::string& csv_b,
                                  double threshold) {
    return {steps_to_threshold(read_metrics(csv_a), threshold),
            steps_to_threshold(read_metrics(csv_b), threshold)};
}

struct SweepComparison {
    int wins_a = 0;
    int wins_b = 0;
    int ties = 0;
    std::vector<CompareResult> per_pair;
};

// Paired comparison across seeds: position i of each list is the same seed.
inline SweepComparison compare_many(const std::vector<std::string>& csvs_a,
                                    const std::vector<std::string>& csvs_b, double threshold) {
    if (csvs_a.size() != csvs_b.size() || csvs_a.empty())
        throw ConfigError("compare needs equally sized non-empty CSV lists");
    SweepComparison out;
    for (std::size_t i = 0; i < csvs_a.size(); ++i) {
        const CompareResult pair = compare_runs(csvs_a[i], csvs_b[i], threshold);
        out.per_pair.push_back(pair);
        if (pair.steps_a < pair.steps_b) ++out.wins_a;
        else if (pair.steps_b < pair.steps_a) ++out.wins_b;
        else ++out.ties;
    }
    return out;
}

struct CurvePoint {
    long long env_steps = 0;
    double mean_return = 0.0;
    double std_return = 0.0;
};

// Aggregates runs into one curve: trailing-5 smoothing per run, linear
// interpolation onto the first run's env_steps grid (clamped at the ends),
// mean and population std across runs at each grid point.
inline std::vector<CurvePoint> emit_curves(const std::vector<std::string>& metrics_paths,
                                           const std::string& out_path) {
    if (metrics_paths.empty()) throw FormatError("emit_curves: no runs given");
    std::vector<MetricsSeries> runs;
    for (const auto& path : metrics_paths) runs.push_back(read_metrics(path));

    std::vector<std::vector<double>> smoothed(runs.size());
    for (std::size_t r = 0; r < runs.size(); ++r) {
        smoothed[r].resize(runs[r].mean_return.size());
        for (std::size_t i = 0; i < runs[r].mean_return.size(); ++i)
            smoothed[r][i] = detail::trailing_mean(runs[r].mean_return, i, 5);
    }

    const auto interp = [](const std::vector<long long>& xs, const std::vector<double>& ys,
                           double x) {
        if (x <= static_cast<double>(xs.front())) return ys.front();
        if (x >= static_cast<double>(xs.back())) return ys.back();
        std::size_t hi = 1;
        while (static_cast<double>(xs[hi]) < x) ++hi;
        const double x0 = static_cast<double>(xs[hi - 1]), x1 = static_cast<double>(xs[hi]);
        const double w = (x - x0) / (x1 - x0);
        return ys[hi - 1] * (1.0 - w) + ys[hi] * w;
    };

    std::vector<CurvePoint> curve;
    for (std::size_t i = 0; i < runs[0].env_steps.size(); ++i) {
        CurvePoint point;
        point.env_steps = runs[0].env_steps[i];
        std::vector<double> vals;
        for (std::size_t r = 0; r < runs.size(); ++r)
            vals.push_back(interp(runs[r].env_steps, smoothed[r],
                                  static_cast<double>(point.env_steps)));
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= vals.size();
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        point.mean_return = mean;
        point.std_return = std::sqrt(var / vals.size());
        curve.push_back(point);
    }

    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw FormatError("cannot open curve output: " + out_path);
        out << "env_steps,mean_return,std_return\n";
        for (const auto& point : curve)
            out << point.env_steps << ',' << detail::fmt6(point.mean_return) << ','
                << detail::fmt6(point.std_return) << "\n";
    }
    return curve;
}

}  // namespace memshape
