#pragma once

#include <Eigen/Core>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "memshape/errors.hpp"
#include "memshape/rng.hpp"

namespace memshape {

// Pre-activations and activations kept from a forward pass, one entry per
// layer (activations additionally holds the input at index 0). Columns are
// batch samples.
struct ForwardTrace {
    std::vector<Eigen::MatrixXd> pre_activations;
    std::vector<Eigen::MatrixXd> activations;
};

struct MlpGrads {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
};

// Feedforward net with tanh hidden layers and a linear output layer.
// Gradients are computed explicitly in backward(); there is no autodiff.
struct Mlp {
    std::vector<Eigen::MatrixXd> weights;  // out x in, per layer
    std::vector<Eigen::VectorXd> biases;

    int layer_count() const { return static_cast<int>(weights.size()); }
    int input_size() const { return static_cast<int>(weights.front().cols()); }
    int output_size() const { return static_cast<int>(weights.back().rows()); }

    // input: in x batch. Returns output: out x batch.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& input, ForwardTrace* trace = nullptr) const {
        if (input.rows() != input_size())
            throw DimensionError("mlp forward: input has " + std::to_string(input.rows()) +
                                 " rows, expected " + std::to_string(input_size()));
        if (trace) {
            trace->pre_activations.clear();
            trace->activations.clear();
            trace->activations.push_back(input);
        }
        Eigen::MatrixXd a = input;
        for (int l = 0; l < layer_count(); ++l) {
            Eigen::MatrixXd z = (weights[l] * a).colwise() + biases[l];
            if (l + 1 < layer_count())
                a = z.array().tanh().matrix();
            else
                a = z;
            if (trace) {
                trace->pre_activations.push_back(z);
                trace->activations.push_back(a);
            }
        }
        return a;
    }

    Eigen::VectorXd forward1(const Eigen::VectorXd& input, ForwardTrace* trace = nullptr) const {
        return forward(Eigen::MatrixXd(input), trace).col(0);
    }
};

// Backprop of `output_grad` (out x batch) through the trace. Gradients are
// summed over batch columns; scale the upstream gradient for a mean.
inline MlpGrads backward(const Mlp& net, const ForwardTrace& trace, const Eigen::MatrixXd& output_grad) {
    const int layers = net.layer_count();
    if (static_cast<int>(trace.activations.size()) != layers + 1)
        throw DimensionError("mlp backward: trace does not match network depth");
    if (output_grad.rows() != net.output_size() || output_grad.cols() != trace.activations.back().cols())
        throw DimensionError("mlp backward: upstream gradient shape mismatch");

    MlpGrads grads;
    grads.weights.resize(layers);
    grads.biases.resize(layers);
    Eigen::MatrixXd delta = output_grad;  // final layer is linear
    for (int l = layers - 1; l >= 0; --l) {
        grads.weights[l].noalias() = delta * trace.activations[l].transpose();
        grads.biases[l] = delta.rowwise().sum();
        if (l > 0) {
            // tanh'(z) = 1 - tanh(z)^2, taken from the stored activation
            const auto& act = trace.activations[l].array();
            delta = (net.weights[l].transpose() * delta).array() * (1.0 - act * act);
        }
    }
    return grads;
}

// Bias-corrected adaptive-moment state, shapes mirroring the parameters.
struct AdamState {
    std::vector<Eigen::MatrixXd> m_weights, v_weights;
    std::vector<Eigen::VectorXd> m_biases, v_biases;
    long step = 0;

    explicit AdamState(const Mlp& net = Mlp{}) {
        for (const auto& w : net.weights) {
            m_weights.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
            v_weights.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
        }
        for (const auto& b : net.biases) {
            m_biases.emplace_back(Eigen::VectorXd::Zero(b.size()));
            v_biases.emplace_back(Eigen::VectorXd::Zero(b.size()));
        }
    }
};

inline void adam_step(Mlp& net, const MlpGrads& grads, AdamState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    for (const auto& g : grads.weights)
        if (!g.allFinite()) throw DivergenceError("adam: non-finite weight gradient");
    for (const auto& g : grads.biases)
        if (!g.allFinite()) throw DivergenceError("adam: non-finite bias gradient");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (int l = 0; l < net.layer_count(); ++l) {
        state.m_weights[l] = beta1 * state.m_weights[l] + (1.0 - beta1) * grads.weights[l];
        state.v_weights[l] = beta2 * state.v_weights[l] +
                             (1.0 - beta2) * grads.weights[l].array().square().matrix();
        net.weights[l].array() -= lr * (state.m_weights[l].array() / bc1) /
                                  ((state.v_weights[l].array() / bc2).sqrt() + eps);
        state.m_biases[l] = beta1 * state.m_biases[l] + (1.0 - beta1) * grads.biases[l];
        state.v_biases[l] = beta2 * state.v_biases[l] +
                            (1.0 - beta2) * grads.biases[l].array().square().matrix();
        net.biases[l].array() -= lr * (state.m_biases[l].array() / bc1) /
                                 ((state.v_biases[l].array() / bc2).sqrt() + eps);
    }
}

// Uniform [-s, s] with s = sqrt(6 / (fan_in + fan_out)), zero biases. The
// final layer is scaled by `final_scale` (0.01 for the actor keeps the
// initial policy near-uniform).
inline Mlp make_mlp(int input, const std::vector<int>& hidden, int output, std::mt19937_64& rng,
                    double final_scale = 1.0) {
    Mlp net;
    std::vector<int> dims;
    dims.push_back(input);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(output);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        const int fan_in = dims[l];
        const int fan_out = dims[l + 1];
        const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-s, s);
        Eigen::MatrixXd w(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c) w(r, c) = dist(rng);
        if (l + 2 == dims.size()) w *= final_scale;
        net.weights.push_back(std::move(w));
        net.biases.emplace_back(Eigen::VectorXd::Zero(fan_out));
    }
    return net;
}

// Actor, critic, and their optimizer moments.
struct PolicyParams {
    Mlp actor;
    Mlp critic;
    AdamState actor_opt;
    AdamState critic_opt;
};

inline PolicyParams init_policy(int feature_size, int action_count, int hidden, std::uint64_t seed) {
    PolicyParams params;
    auto actor_rng = make_rng(seed, 0x616374ULL);
    auto critic_rng = make_rng(seed, 0x637274ULL);
    params.actor = make_mlp(feature_size, {hidden}, action_count, actor_rng, 0.01);
    params.critic = make_mlp(feature_size, {hidden}, 1, critic_rng);
    params.actor_opt = AdamState(params.actor);
    params.critic_opt = AdamState(params.critic);
    return params;
}

inline double logsumexp(const Eigen::VectorXd& logits) {
    const double m = logits.maxCoeff();
    return m + std::log((logits.array() - m).exp().sum());
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::ArrayXd shifted = (logits.array() - logits.maxCoeff()).exp();
    return (shifted / shifted.sum()).matrix();
}

struct SampledAction {
    int action = 0;
    double logprob = 0.0;
};

// Sample from softmax(logits) with one uniform draw; logprob is computed via
// the stabilized log-sum-exp.
inline SampledAction sample_action(const Eigen::VectorXd& logits, std::mt19937_64& rng) {
    const Eigen::VectorXd probs = softmax(logits);
    const double u = uniform01(rng);
    double cum = 0.0;
    int action = static_cast<int>(probs.size()) - 1;
    for (int a = 0; a < probs.size(); ++a) {
        cum += probs[a];
        if (u < cum) {
            action = a;
            break;
        }
    }
    return {action, logits[action] - logsumexp(logits)};
}

}  // namespace memshape
