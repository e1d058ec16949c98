#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "memshape/env.hpp"
#include "memshape/errors.hpp"
#include "memshape/neuralnet.hpp"
#include "memshape/rng.hpp"
#include "memshape/rollout.hpp"

namespace memshape {

struct PpoConfig {
    double gamma = 0.99;
    double lambda = 0.95;
    double clip_eps = 0.2;
    int epochs = 4;
    int minibatch_size = 64;
    int horizon = 2048;
    double entropy_coef = 0.01;
    double value_coef = 0.5;
    bool normalize_advantages = true;
    double actor_lr = 3e-4;
    double critic_lr = 1e-3;
    // Shaping schedule: xi = max(xi_min, xi0 * (1 - iteration/decay_horizon)).
    double xi0 = 0.5;
    double xi_min = 0.01;
    int decay_horizon = 50;
};

struct ShapedBatch {
    Eigen::VectorXd advantages;         // A_t, post-normalization when enabled
    Eigen::VectorXd utility;            // U_t
    double xi = 0.0;                    // schedule value for this iteration
    Eigen::VectorXd shaped_advantages;  // A_tilde = A + xi * U (where U != 0)
    Eigen::VectorXd returns;
};

struct UpdateStats {
    double policy_objective = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    double approx_kl = 0.0;
    double mean_utility = 0.0;
};

struct CollectHooks {
    // Called before sampling, with the pre-step observation; may mutate logits.
    std::function<void(const Observation& obs, Eigen::VectorXd& logits)> on_logits;
    std::function<void(int action)> on_action;  // after sampling
    std::function<void()> on_episode_end;
};

// Collects exactly `horizon` transitions, auto-resetting finished episodes.
// `current` carries the live observation across calls so an episode can span
// rollout boundaries; the caller seeds it with env.reset() once.
inline Rollout collect_rollout(const PolicyParams& params, Env& env, int horizon,
                               std::mt19937_64& rng, Observation& current,
                               const CollectHooks* hooks = nullptr) {
    if (horizon < 1) throw DimensionError("collect_rollout: horizon must be >= 1");
    Rollout out;
    out.features.resize(env.feature_size(), horizon);
    out.obs_keys.resize(horizon);
    out.actions.resize(horizon);
    out.logprob_old.resize(horizon);
    out.rewards.resize(horizon);
    out.values.resize(horizon);
    out.done.resize(horizon);
    out.truncated.resize(horizon);
    out.events.resize(horizon);
    out.positions.resize(horizon);
    out.utility.assign(horizon, 0.0);

    for (int t = 0; t < horizon; ++t) {
        out.features.col(t) = current.features;
        out.obs_keys[t] = current.key;
        out.positions[t] = env.agent_position();
        out.values[t] = params.critic.forward1(current.features)(0);

        Eigen::VectorXd logits = params.actor.forward1(current.features);
        if (hooks && hooks->on_logits) hooks->on_logits(current, logits);
        const SampledAction sampled = sample_action(logits, rng);
        if (hooks && hooks->on_action) hooks->on_action(sampled.action);
        out.actions[t] = sampled.action;
        out.logprob_old[t] = sampled.logprob;

        const StepResult step = env.step(sampled.action);
        out.rewards[t] = step.reward;
        out.done[t] = step.done ? 1 : 0;
        out.truncated[t] = step.truncated ? 1 : 0;
        out.events[t] = step.observation.events;
        if (step.done) {
            current = env.reset();
            if (hooks && hooks->on_episode_end) hooks->on_episode_end();
        } else {
            current = step.observation;
        }
    }
    const int last = horizon - 1;
    out.bootstrap_value = out.done[last] ? 0.0 : params.critic.forward1(current.features)(0);
    return out;
}

// GAE(gamma, lambda) with the series truncated at episode boundaries. The
// bootstrap value stands in for V(s_{T}) only when the last step did not end
// its episode; returns = advantages + values.
inline std::pair<std::vector<double>, std::vector<double>> compute_gae(
    const std::vector<double>& rewards, const std::vector<double>& values,
    const std::vector<std::uint8_t>& done, double bootstrap_value, double gamma, double lambda) {
    if (rewards.size() != values.size() || rewards.size() != done.size())
        throw DimensionError("compute_gae: input lengths differ");
    const int n = static_cast<int>(rewards.size());
    std::vector<double> advantages(n, 0.0), returns(n, 0.0);
    double gae = 0.0;
    double next_value = bootstrap_value;
    for (int t = n - 1; t >= 0; --t) {
        const double nonterminal = done[t] ? 0.0 : 1.0;
        const double delta = rewards[t] + gamma * next_value * nonterminal - values[t];
        gae = delta + gamma * lambda * nonterminal * gae;
        advantages[t] = gae;
        returns[t] = gae + values[t];
        next_value = values[t];
    }
    return {advantages, returns};
}

inline double xi_schedule(int iteration, const PpoConfig& cfg) {
    const double frac = static_cast<double>(iteration) / static_cast<double>(cfg.decay_horizon);
    return std::max(cfg.xi_min, cfg.xi0 * (1.0 - frac));
}

// Normalizes advantages (population std + 1e-8) when asked, then adds
// xi * U_t. The addition is applied only at steps with nonzero utility so a
// zero trace leaves the advantage vector bitwise untouched.
inline ShapedBatch shape_advantages(const std::vector<double>& advantages,
                                    const std::vector<double>& returns,
                                    const std::vector<double>& utility, double xi, bool enabled,
                                    bool normalize) {
    if (advantages.size() != utility.size() || advantages.size() != returns.size())
        throw DimensionError("shape_advantages: input lengths differ");
    const int n = static_cast<int>(advantages.size());
    ShapedBatch batch;
    batch.advantages = Eigen::Map<const Eigen::VectorXd>(advantages.data(), n);
    batch.utility = Eigen::Map<const Eigen::VectorXd>(utility.data(), n);
    batch.returns = Eigen::Map<const Eigen::VectorXd>(returns.data(), n);
    batch.xi = xi;
    if (normalize && n > 0) {
        const double mean = batch.advantages.mean();
        const double var = (batch.advantages.array() - mean).square().sum() / n;
        batch.advantages = (batch.advantages.array() - mean) / (std::sqrt(var) + 1e-8);
    }
    batch.shaped_advantages = batch.advantages;
    if (enabled) {
        for (int t = 0; t < n; ++t)
            if (utility[t] != 0.0) batch.shaped_advantages(t) += xi * utility[t];
    }
    return batch;
}

// One clipped-surrogate term: min(r*A, clip(r, 1-eps, 1+eps)*A).
inline double clipped_objective(double ratio, double shaped_advantage, double clip_eps) {
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(ratio * shaped_advantage, clipped * shaped_advantage);
}

namespace detail {

// Fisher-Yates with our own uniform draw; std::shuffle's generator call
// sequence is implementation-defined, which would leak into checkpoints.
inline void shuffle_indices(std::vector<int>& indices, std::mt19937_64& rng) {
    for (int i = static_cast<int>(indices.size()) - 1; i > 0; --i) {
        const int j = static_cast<int>(uniform_int(rng, i + 1));
        std::swap(indices[i], indices[j]);
    }
}

}  // namespace detail

// K epochs of minibatch updates: gradient ascent on the clipped surrogate
// plus entropy bonus, descent on the squared-error critic loss. Gradients are
// derived analytically; the min() passes gradient through the unclipped term
// exactly when it is no worse than the clipped one (ties included), which
// leaves a zero actor gradient for clipped-and-worse samples.
inline UpdateStats ppo_update(const Rollout& rollout, const ShapedBatch& batch,
                              PolicyParams& params, const PpoConfig& cfg, std::mt19937_64& rng) {
    const int n = rollout.steps();
    if (batch.shaped_advantages.size() != n)
        throw DimensionError("ppo_update: batch not aligned with rollout");
    const int action_count = static_cast<int>(params.actor.biases.back().size());

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;

    UpdateStats stats;
    stats.mean_utility = n > 0 ? batch.utility.mean() : 0.0;
    double objective_sum = 0.0, value_loss_sum = 0.0, entropy_sum = 0.0, kl_sum = 0.0;
    std::int64_t clipped_count = 0, sample_count = 0;
    int minibatch_count = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::shuffle_indices(order, rng);
        for (int start = 0; start < n; start += cfg.minibatch_size) {
            const int b = std::min(cfg.minibatch_size, n - start);
            Eigen::MatrixXd feats(rollout.features.rows(), b);
            Eigen::VectorXd adv(b), logp_old(b), rets(b);
            std::vector<int> acts(b);
            for (int i = 0; i < b; ++i) {
                const int t = order[start + i];
                feats.col(i) = rollout.features.col(t);
                adv(i) = batch.shaped_advantages(t);
                logp_old(i) = rollout.logprob_old[t];
                rets(i) = batch.returns(t);
                acts[i] = rollout.actions[t];
            }

            // Actor pass: log-softmax, ratios, surrogate gradient per column.
            ForwardTrace trace;
            Eigen::MatrixXd logits = params.actor.forward(feats, &trace);
            Eigen::RowVectorXd col_max = logits.colwise().maxCoeff();
            Eigen::MatrixXd shifted = logits.rowwise() - col_max;
            Eigen::MatrixXd exp_shifted = shifted.array().exp();
            Eigen::RowVectorXd denom = exp_shifted.colwise().sum();
            Eigen::MatrixXd probs = exp_shifted.array().rowwise() / denom.array();
            Eigen::RowVectorXd log_denom = denom.array().log();

            Eigen::MatrixXd grad_logits = Eigen::MatrixXd::Zero(action_count, b);
            for (int i = 0; i < b; ++i) {
                const double logp_new = shifted(acts[i], i) - log_denom(i);
                const double ratio = std::exp(logp_new - logp_old(i));
                const double unclipped = ratio * adv(i);
                const double clipped =
                    std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv(i);
                objective_sum += std::min(unclipped, clipped);
                kl_sum += logp_old(i) - logp_new;
                if (std::abs(ratio - 1.0) > cfg.clip_eps) ++clipped_count;
                ++sample_count;

                if (unclipped <= clipped) {
                    // d(ratio*A)/dlogits = A * ratio * (onehot(a) - p)
                    grad_logits.col(i) = -adv(i) * ratio * probs.col(i);
                    grad_logits(acts[i], i) += adv(i) * ratio;
                }
                const Eigen::VectorXd logp_col = shifted.col(i).array() - log_denom(i);
                const double entropy = -(probs.col(i).array() * logp_col.array()).sum();
                entropy_sum += entropy;
                // dH/dlogits = -p .* (log p + H)
                grad_logits.col(i) -=
                    cfg.entropy_coef * (probs.col(i).array() * (logp_col.array() + entropy)).matrix();
            }
            // Ascent on the mean objective: descend its negation.
            grad_logits *= -1.0 / static_cast<double>(b);
            MlpGrads actor_grads = backward(params.actor, trace, grad_logits);
            adam_step(params.actor, actor_grads, params.actor_opt, cfg.actor_lr);

            // Critic pass: squared-error regression to returns.
            ForwardTrace vtrace;
            Eigen::MatrixXd v = params.critic.forward(feats, &vtrace);
            Eigen::MatrixXd verr = v.row(0).transpose() - rets;
            value_loss_sum += cfg.value_coef * verr.squaredNorm() / b;
            Eigen::MatrixXd grad_v =
                (cfg.value_coef * 2.0 / static_cast<double>(b)) * verr.transpose();
            MlpGrads critic_grads = backward(params.critic, vtrace, grad_v);
            adam_step(params.critic, critic_grads, params.critic_opt, cfg.critic_lr);
            ++minibatch_count;
        }
    }

    stats.policy_objective = sample_count > 0 ? objective_sum / sample_count : 0.0;
    stats.value_loss = minibatch_count > 0 ? value_loss_sum / minibatch_count : 0.0;
    stats.entropy = sample_count > 0 ? entropy_sum / sample_count : 0.0;
    stats.clip_fraction =
        sample_count > 0 ? static_cast<double>(clipped_count) / sample_count : 0.0;
    stats.approx_kl = sample_count > 0 ? kl_sum / sample_count : 0.0;
    if (!std::isfinite(stats.policy_objective) || !std::isfinite(stats.value_loss))
        throw DivergenceError("ppo_update: non-finite loss");
    return stats;
}

}  // namespace memshape
