#pragma once

#include "mtkd/common.hpp"
#include "mtkd/decode.hpp"
#include "mtkd/lattice.hpp"
#include "mtkd/random.hpp"

#include <span>
#include <string>
#include <vector>

namespace mtkd {

/// Flat view of one parameter block.
struct ParamView {
    std::string name;
    std::span<double> values;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
};

/// Every block of `model`, in a fixed order. `model` is any type with a
/// `visit(f, prefix)` member calling f(name, Matrix&) for each block.
template <class Model>
std::vector<ParamView> param_views(Model& model, const std::string& prefix = "") {
    std::vector<ParamView> out;
    model.visit(
        [&out](const std::string& name, Matrix& m) {
            out.push_back({name, std::span<double>(m.data(), static_cast<std::size_t>(m.size())),
                           m.rows(), m.cols()});
        },
        prefix);
    return out;
}

template <class Model>
std::size_t parameter_count(const Model& model) {
    std::size_t n = 0;
    const_cast<Model&>(model).visit([&n](const std::string&, Matrix& m) { n += static_cast<std::size_t>(m.size()); }, "");
    return n;
}

template <class Model>
void zero_params(Model& model) {
    model.visit([](const std::string&, Matrix& m) { m.setZero(); }, "");
}

/// dst += alpha * src over matching blocks.
template <class Model>
void axpy_params(Model& dst, const Model& src, double alpha) {
    auto d = param_views(dst);
    auto s = param_views(const_cast<Model&>(src));
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t j = 0; j < d[i].values.size(); ++j) d[i].values[j] += alpha * s[i].values[j];
    }
}

template <class Model>
std::vector<double> flatten_params(const Model& model) {
    std::vector<double> out;
    for (const auto& v : param_views(const_cast<Model&>(model))) {
        out.insert(out.end(), v.values.begin(), v.values.end());
    }
    return out;
}

/// Fills every block uniformly in +-1/sqrt(fan_in), fan_in = cols of the
/// block's weight (biases use their layer's weight fan-in).
void init_uniform(Matrix& m, std::size_t fan_in, Rng& rng);

/// y = W x + b applied row-wise to an N x in matrix.
struct Linear {
    Matrix weight;  // out x in
    Matrix bias;    // out x 1

    Linear() = default;
    Linear(std::size_t in, std::size_t out);

    std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
    std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }

    void init(Rng& rng);
    Matrix forward(const Matrix& x) const;
    /// Accumulates into `grads`; returns dL/dx.
    Matrix backward(const Matrix& x, const Matrix& dy, Linear& grads) const;

    template <class F>
    void visit(F&& f, const std::string& prefix) {
        f(prefix + "weight", weight);
        f(prefix + "bias", bias);
    }
};

/// One temporal block: h_t = tanh(W [x_{t-past}; ...; x_{t+future}] + b) with
/// zero padding at the edges.
struct WindowedLayer {
    Linear linear;
    int past = 0;
    int future = 0;

    WindowedLayer() = default;
    WindowedLayer(std::size_t in, std::size_t out, int past, int future);

    std::size_t in_dim() const {
        return linear.in_dim() / static_cast<std::size_t>(past + future + 1);
    }

    struct Cache {
        Matrix window;
        Matrix output;
    };

    Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
    Matrix backward(const Cache& cache, const Matrix& dy, WindowedLayer& grads) const;

    template <class F>
    void visit(F&& f, const std::string& prefix) {
        linear.visit(f, prefix);
    }
};

Matrix build_window(const Matrix& x, int past, int future);

/// Label-history predictor: token embedding followed by a GRU cell. Output row
/// u is the state after consuming [blank, y_1, ..., y_u].
struct Predictor {
    Matrix embedding;  // V x E
    Matrix w_input;    // 3H x E, gate order (reset, update, candidate)
    Matrix w_hidden;   // 3H x H
    Matrix b_input;    // 3H x 1
    Matrix b_hidden;   // 3H x 1

    Predictor() = default;
    Predictor(std::size_t vocab, std::size_t embed_dim, std::size_t hidden_dim);

    std::size_t hidden_dim() const { return static_cast<std::size_t>(w_hidden.cols()); }
    std::size_t vocab() const { return static_cast<std::size_t>(embedding.rows()); }

    void init(Rng& rng);

    struct Step {
        int token = 0;
        Vector h_prev, reset, update, candidate, hidden_gate;
    };
    struct Cache {
        std::vector<Step> steps;
    };

    Vector step(const Vector& h_prev, int token, Step* record = nullptr) const;
    Matrix forward(const LabelSequence& y, Cache* cache = nullptr) const;
    void backward(const Cache& cache, const Matrix& d_states, Predictor& grads) const;

    template <class F>
    void visit(F&& f, const std::string& prefix) {
        f(prefix + "embedding", embedding);
        f(prefix + "w_input", w_input);
        f(prefix + "w_hidden", w_hidden);
        f(prefix + "b_input", b_input);
        f(prefix + "b_hidden", b_hidden);
    }
};

/// Additive joint: log_softmax(O tanh(J_f f_t + J_g g_u + b) + o).
struct JointNetwork {
    Matrix w_enc;   // J x D_enc
    Matrix w_pred;  // J x H
    Matrix bias;    // J x 1
    Matrix w_out;   // V x J
    Matrix b_out;   // V x 1

    JointNetwork() = default;
    JointNetwork(std::size_t enc_dim, std::size_t pred_dim, std::size_t joint_dim, std::size_t vocab);

    std::size_t vocab() const { return static_cast<std::size_t>(w_out.rows()); }
    std::size_t enc_dim() const { return static_cast<std::size_t>(w_enc.cols()); }

    void init(Rng& rng);

    struct Cache {
        std::size_t frames = 0;
        std::size_t states = 0;
        Matrix hidden;     // (T * (U+1)) x J
        Matrix log_probs;  // (T * (U+1)) x V
    };

    /// (T, U+1, V) lattice values for every pairing of encoder frame and
    /// predictor state.
    DistributionLattice forward(const Matrix& enc, const Matrix& pred, Cache* cache = nullptr) const;
    /// d_logz in lattice layout. Accumulates parameter gradients and writes
    /// dL/d enc and dL/d pred.
    void backward(const Cache& cache, const Matrix& enc, const Matrix& pred,
                  std::span<const double> d_logz, JointNetwork& grads, Matrix& d_enc,
                  Matrix& d_pred) const;

    void node_log_probs(std::span<const double> frame, std::span<const double> state,
                        std::span<double> out) const;

    template <class F>
    void visit(F&& f, const std::string& prefix) {
        f(prefix + "w_enc", w_enc);
        f(prefix + "w_pred", w_pred);
        f(prefix + "bias", bias);
        f(prefix + "w_out", w_out);
        f(prefix + "b_out", b_out);
    }
};

/// Predictor plus joint network: everything of a transducer after the encoder.
class TransducerHead : public JointScorer {
public:
    Predictor predictor;
    JointNetwork joint;

    TransducerHead() = default;
    TransducerHead(std::size_t enc_dim, std::size_t vocab, std::size_t pred_embed,
                   std::size_t pred_hidden, std::size_t joint_dim);

    void init(Rng& rng);

    struct Cache {
        Predictor::Cache predictor;
        JointNetwork::Cache joint;
        Matrix pred_out;
    };

    DistributionLattice lattice(const Matrix& enc, const LabelSequence& y, Cache* cache = nullptr) const;
    /// Returns dL/d enc.
    Matrix backward(const Cache& cache, const Matrix& enc, std::span<const double> d_logz,
                    TransducerHead& grads) const;

    std::size_t vocab_size() const override { return joint.vocab(); }
    std::vector<double> initial_state() const override;
    std::vector<double> advance(std::span<const double> state, int token) const override;
    void log_probs(std::span<const double> frame, std::span<const double> state,
                   std::span<double> out) const override;

    template <class F>
    void visit(F&& f, const std::string& prefix) {
        predictor.visit(f, prefix + "predictor.");
        joint.visit(f, prefix + "joint.");
    }
};

}  // namespace mtkd
