#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "memshape/errors.hpp"
#include "memshape/neuralnet.hpp"

namespace memshape {

// Versioned binary policy checkpoint. Raw little-endian doubles, so the
// round-trip is exact and two identical training runs produce byte-identical
// files. Adam moments and step counters ride along with the parameters.

namespace detail {

constexpr char kCheckpointMagic[4] = {'M', 'S', 'H', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    write_u32(out, static_cast<std::uint32_t>(m.rows()));
    write_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const double v = m(r, c);
            out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
}
inline void write_vector(std::ostream& out, const Eigen::VectorXd& v) {
    write_u32(out, static_cast<std::uint32_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double x = v(i);
        out.write(reinterpret_cast<const char*>(&x), sizeof x);
    }
}

inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw FormatError("checkpoint: truncated file");
    return v;
}
inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw FormatError("checkpoint: truncated file");
    return v;
}
inline std::string read_string(std::istream& in) {
    const std::uint32_t n = read_u32(in);
    if (n > (1u << 20)) throw FormatError("checkpoint: implausible string length");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw FormatError("checkpoint: truncated file");
    return s;
}
inline Eigen::MatrixXd read_matrix(std::istream& in) {
    const std::uint32_t rows = read_u32(in), cols = read_u32(in);
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) {
            double v = 0;
            in.read(reinterpret_cast<char*>(&v), sizeof v);
            if (!in) throw FormatError("checkpoint: truncated file");
            m(r, c) = v;
        }
    return m;
}
inline Eigen::VectorXd read_vector(std::istream& in) {
    const std::uint32_t n = read_u32(in);
    Eigen::VectorXd v(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        double x = 0;
        in.read(reinterpret_cast<char*>(&x), sizeof x);
        if (!in) throw FormatError("checkpoint: truncated file");
        v(i) = x;
    }
    return v;
}

inline void write_net(std::ostream& out, const Mlp& net) {
    write_u32(out, static_cast<std::uint32_t>(net.weights.size()));
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        write_matrix(out, net.weights[l]);
        write_vector(out, net.biases[l]);
    }
}
inline Mlp read_net(std::istream& in) {
    Mlp net;
    const std::uint32_t layers = read_u32(in);
    for (std::uint32_t l = 0; l < layers; ++l) {
        net.weights.push_back(read_matrix(in));
        net.biases.push_back(read_vector(in));
    }
    return net;
}

inline void write_adam(std::ostream& out, const AdamState& state) {
    write_u64(out, static_cast<std::uint64_t>(state.step));
    write_u32(out, static_cast<std::uint32_t>(state.m_weights.size()));
    for (std::size_t l = 0; l < state.m_weights.size(); ++l) {
        write_matrix(out, state.m_weights[l]);
        write_matrix(out, state.v_weights[l]);
        write_vector(out, state.m_biases[l]);
        write_vector(out, state.v_biases[l]);
    }
}
inline AdamState read_adam(std::istream& in) {
    AdamState state;
    state.step = static_cast<std::int64_t>(read_u64(in));
    const std::uint32_t layers = read_u32(in);
    for (std::uint32_t l = 0; l < layers; ++l) {
        state.m_weights.push_back(read_matrix(in));
        state.v_weights.push_back(read_matrix(in));
        state.m_biases.push_back(read_vector(in));
        state.v_biases.push_back(read_vector(in));
    }
    return state;
}

}  // namespace detail

struct PolicyCheckpoint {
    PolicyParams params;
    std::string env_id;
    std::uint64_t train_seed = 0;
};

inline void save_policy(const std::string& path, const PolicyParams& params,
                        const std::string& env_id, std::uint64_t train_seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("checkpoint: cannot open for writing: " + path);
    out.write(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
    detail::write_u32(out, detail::kCheckpointVersion);
    detail::write_string(out, env_id);
    detail::write_u64(out, train_seed);
    detail::write_net(out, params.actor);
    detail::write_net(out, params.critic);
    detail::write_adam(out, params.actor_opt);
    detail::write_adam(out, params.critic_opt);
    if (!out) throw FormatError("checkpoint: write failed: " + path);
}

inline PolicyCheckpoint load_policy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open: " + path);
    char magic[4];
    in.read(magic, sizeof magic);
    if (!in || std::string(magic, 4) != std::string(detail::kCheckpointMagic, 4))
        throw FormatError("checkpoint: bad magic: " + path);
    const std::uint32_t version = detail::read_u32(in);
    if (version != detail::kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    PolicyCheckpoint ckpt;
    ckpt.env_id = detail::read_string(in);
    ckpt.train_seed = detail::read_u64(in);
    ckpt.params.actor = detail::read_net(in);
    ckpt.params.critic = detail::read_net(in);
    ckpt.params.actor_opt = detail::read_adam(in);
    ckpt.params.critic_opt = detail::read_adam(in);
    return ckpt;
}

}  // namespace memshape
