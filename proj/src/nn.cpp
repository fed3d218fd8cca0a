#include "mtkd/nn.hpp"
#include "mtkd/optim.hpp"

#include <cmath>

namespace mtkd {
namespace {

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

Vector sigmoid(const Vector& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

void log_softmax_rows(Matrix& logits) {
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double lse = log_sum_exp(logits.row(r).data(), static_cast<std::size_t>(logits.cols()));
        logits.row(r).array() -= lse;
    }
}

}  // namespace

void init_uniform(Matrix& m, std::size_t fan_in, Rng& rng) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
}

// ---- Linear ----------------------------------------------------------------

Linear::Linear(std::size_t in, std::size_t out)
    : weight(Matrix::Zero(idx(out), idx(in))), bias(Matrix::Zero(idx(out), 1)) {}

void Linear::init(Rng& rng) {
    init_uniform(weight, in_dim(), rng);
    init_uniform(bias, in_dim(), rng);
}

Matrix Linear::forward(const Matrix& x) const {
    Matrix y = x * weight.transpose();
    y.rowwise() += bias.col(0).transpose();
    return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy, Linear& grads) const {
    grads.weight.noalias() += dy.transpose() * x;
    grads.bias.col(0) += dy.colwise().sum().transpose();
    return dy * weight;
}

// ---- WindowedLayer -----------------------------------------------------------

Matrix build_window(const Matrix& x, int past, int future) {
    const Eigen::Index T = x.rows();
    const Eigen::Index d = x.cols();
    const int width = past + future + 1;
    Matrix window = Matrix::Zero(T, d * width);
    for (Eigen::Index t = 0; t < T; ++t) {
        for (int j = -past; j <= future; ++j) {
            const Eigen::Index src = t + j;
            if (src < 0 || src >= T) continue;
            window.block(t, (j + past) * d, 1, d) = x.row(src);
        }
    }
    return window;
}

WindowedLayer::WindowedLayer(std::size_t in, std::size_t out, int past_ctx, int future_ctx)
    : linear(in * static_cast<std::size_t>(past_ctx + future_ctx + 1), out),
      past(past_ctx),
      future(future_ctx) {}

Matrix WindowedLayer::forward(const Matrix& x, Cache* cache) const {
    Matrix window = build_window(x, past, future);
    Matrix out = linear.forward(window).array().tanh().matrix();
    if (cache != nullptr) {
        cache->window = std::move(window);
        cache->output = out;
    }
    return out;
}

Matrix WindowedLayer::backward(const Cache& cache, const Matrix& dy, WindowedLayer& grads) const {
    const Matrix dz = (dy.array() * (1.0 - cache.output.array().square())).matrix();
    const Matrix dwindow = linear.backward(cache.window, dz, grads.linear);
    const Eigen::Index T = dy.rows();
    const auto d = idx(in_dim());
    Matrix dx = Matrix::Zero(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        for (int j = -past; j <= future; ++j) {
            const Eigen::Index src = t + j;
            if (src < 0 || src >= T) continue;
            dx.row(src) += dwindow.block(t, (j + past) * d, 1, d);
        }
    }
    return dx;
}

// ---- Predictor ---------------------------------------------------------------

Predictor::Predictor(std::size_t vocab, std::size_t embed_dim, std::size_t hidden_dim)
    : embedding(Matrix::Zero(idx(vocab), idx(embed_dim))),
      w_input(Matrix::Zero(idx(3 * hidden_dim), idx(embed_dim))),
      w_hidden(Matrix::Zero(idx(3 * hidden_dim), idx(hidden_dim))),
      b_input(Matrix::Zero(idx(3 * hidden_dim), 1)),
      b_hidden(Matrix::Zero(idx(3 * hidden_dim), 1)) {}

void Predictor::init(Rng& rng) {
    init_uniform(embedding, 1, rng);
    init_uniform(w_input, static_cast<std::size_t>(w_input.cols()), rng);
    init_uniform(w_hidden, hidden_dim(), rng);
    init_uniform(b_input, hidden_dim(), rng);
    init_uniform(b_hidden, hidden_dim(), rng);
}

Vector Predictor::step(const Vector& h_prev, int token, Step* record) const {
    const Eigen::Index H = idx(hidden_dim());
    const Vector gx = w_input * embedding.row(token).transpose() + b_input.col(0);
    const Vector gh = w_hidden * h_prev + b_hidden.col(0);
    const Vector reset = sigmoid(gx.segment(0, H) + gh.segment(0, H));
    const Vector update = sigmoid(gx.segment(H, H) + gh.segment(H, H));
    const Vector hidden_gate = gh.segment(2 * H, H);
    const Vector candidate =
        (gx.segment(2 * H, H).array() + reset.array() * hidden_gate.array()).tanh().matrix();
    Vector h = ((1.0 - update.array()) * candidate.array() + update.array() * h_prev.array()).matrix();
    if (record != nullptr) *record = Step{token, h_prev, reset, update, candidate, hidden_gate};
    return h;
}

Matrix Predictor::forward(const LabelSequence& y, Cache* cache) const {
    const Eigen::Index H = idx(hidden_dim());
    Matrix states(idx(y.size() + 1), H);
    if (cache != nullptr) cache->steps.assign(y.size() + 1, {});
    Vector h = Vector::Zero(H);
    for (std::size_t u = 0; u <= y.size(); ++u) {
        const int token = u == 0 ? kBlank : y[u - 1];
        h = step(h, token, cache != nullptr ? &cache->steps[u] : nullptr);
        states.row(idx(u)) = h.transpose();
    }
    return states;
}

void Predictor::backward(const Cache& cache, const Matrix& d_states, Predictor& grads) const {
    const Eigen::Index H = idx(hidden_dim());
    Vector dh_next = Vector::Zero(H);
    Vector dgx(3 * H);
    Vector dgh(3 * H);
    for (std::size_t s = cache.steps.size(); s-- > 0;) {
        const Step& st = cache.steps[s];
        const Vector dh = d_states.row(idx(s)).transpose() + dh_next;
        const Vector dn = (dh.array() * (1.0 - st.update.array())).matrix();
        const Vector dz = (dh.array() * (st.h_prev.array() - st.candidate.array())).matrix();
        Vector dh_prev = (dh.array() * st.update.array()).matrix();
        const Vector dn_pre = (dn.array() * (1.0 - st.candidate.array().square())).matrix();
        const Vector dz_pre = (dz.array() * st.update.array() * (1.0 - st.update.array())).matrix();
        const Vector dr_pre = (dn_pre.array() * st.hidden_gate.array() * st.reset.array() *
                               (1.0 - st.reset.array()))
                                  .matrix();
        dgx << dr_pre, dz_pre, dn_pre;
        dgh << dr_pre, dz_pre, (dn_pre.array() * st.reset.array()).matrix();

        const Vector x = embedding.row(st.token).transpose();
        grads.w_input.noalias() += dgx * x.transpose();
        grads.b_input.col(0) += dgx;
        grads.w_hidden.noalias() += dgh * st.h_prev.transpose();
        grads.b_hidden.col(0) += dgh;
        grads.embedding.row(st.token) += (w_input.transpose() * dgx).transpose();
        dh_prev.noalias() += w_hidden.transpose() * dgh;
        dh_next = dh_prev;
    }
}

// ---- JointNetwork ------------------------------------------------------------

JointNetwork::JointNetwork(std::size_t enc_dim, std::size_t pred_dim, std::size_t joint_dim,
                           std::size_t vocab)
    : w_enc(Matrix::Zero(idx(joint_dim), idx(enc_dim))),
      w_pred(Matrix::Zero(idx(joint_dim), idx(pred_dim))),
      bias(Matrix::Zero(idx(joint_dim), 1)),
      w_out(Matrix::Zero(idx(vocab), idx(joint_dim))),
      b_out(Matrix::Zero(idx(vocab), 1)) {}

void JointNetwork::init(Rng& rng) {
    init_uniform(w_enc, static_cast<std::size_t>(w_enc.cols()), rng);
    init_uniform(w_pred, static_cast<std::size_t>(w_pred.cols()), rng);
    init_uniform(bias, static_cast<std::size_t>(w_enc.cols()), rng);
    init_uniform(w_out, static_cast<std::size_t>(w_out.cols()), rng);
    init_uniform(b_out, static_cast<std::size_t>(w_out.cols()), rng);
}

DistributionLattice JointNetwork::forward(const Matrix& enc, const Matrix& pred, Cache* cache) const {
    const Eigen::Index T = enc.rows();
    const Eigen::Index S = pred.rows();
    const Matrix f = enc * w_enc.transpose();
    Matrix g = pred * w_pred.transpose();
    g.rowwise() += bias.col(0).transpose();
    Matrix hidden(T * S, w_enc.rows());
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index u = 0; u < S; ++u) {
            hidden.row(t * S + u) = (f.row(t) + g.row(u)).array().tanh().matrix();
        }
    }
    Matrix logits = hidden * w_out.transpose();
    logits.rowwise() += b_out.col(0).transpose();
    log_softmax_rows(logits);
    std::vector<double> values(logits.data(), logits.data() + logits.size());
    if (cache != nullptr) {
        cache->frames = static_cast<std::size_t>(T);
        cache->states = static_cast<std::size_t>(S);
        cache->hidden = std::move(hidden);
        cache->log_probs = std::move(logits);
    }
    return DistributionLattice::from_log_probs(static_cast<std::size_t>(T),
                                               static_cast<std::size_t>(S - 1), vocab(),
                                               std::move(values));
}

void JointNetwork::backward(const Cache& cache, const Matrix& enc, const Matrix& pred,
                            std::span<const double> d_logz, JointNetwork& grads, Matrix& d_enc,
                            Matrix& d_pred) const {
    const auto T = idx(cache.frames);
    const auto S = idx(cache.states);
    const Eigen::Index V = idx(vocab());
    using RowMajorMap = Eigen::Map<const Matrix>;
    const RowMajorMap dlz(d_logz.data(), T * S, V);

    const Matrix probs = cache.log_probs.array().exp().matrix();
    const Vector row_sums = dlz.rowwise().sum();
    Matrix d_logits = dlz;
    d_logits -= (probs.array().colwise() * row_sums.array()).matrix();

    grads.w_out.noalias() += d_logits.transpose() * cache.hidden;
    grads.b_out.col(0) += d_logits.colwise().sum().transpose();
    const Matrix d_hidden = d_logits * w_out;
    const Matrix d_pre = (d_hidden.array() * (1.0 - cache.hidden.array().square())).matrix();

    Matrix df = Matrix::Zero(T, d_pre.cols());
    Matrix dg = Matrix::Zero(S, d_pre.cols());
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index u = 0; u < S; ++u) {
            df.row(t) += d_pre.row(t * S + u);
            dg.row(u) += d_pre.row(t * S + u);
        }
    }
    grads.bias.col(0) += dg.colwise().sum().transpose();
    grads.w_enc.noalias() += df.transpose() * enc;
    grads.w_pred.noalias() += dg.transpose() * pred;
    d_enc = df * w_enc;
    d_pred = dg * w_pred;
}

void JointNetwork::node_log_probs(std::span<const double> frame, std::span<const double> state,
                                  std::span<double> out) const {
    const Eigen::Map<const Vector> f(frame.data(), idx(frame.size()));
    const Eigen::Map<const Vector> g(state.data(), idx(state.size()));
    const Vector hidden = (w_enc * f + w_pred * g + bias.col(0)).array().tanh().matrix();
    Vector logits = w_out * hidden + b_out.col(0);
    const double lse = log_sum_exp(logits.data(), static_cast<std::size_t>(logits.size()));
    for (Eigen::Index k = 0; k < logits.size(); ++k) out[static_cast<std::size_t>(k)] = logits[k] - lse;
}

// ---- TransducerHead ----------------------------------------------------------

TransducerHead::TransducerHead(std::size_t enc_dim, std::size_t vocab, std::size_t pred_embed,
                               std::size_t pred_hidden, std::size_t joint_dim)
    : predictor(vocab, pred_embed, pred_hidden), joint(enc_dim, pred_hidden, joint_dim, vocab) {}

void TransducerHead::init(Rng& rng) {
    predictor.init(rng);
    joint.init(rng);
}

DistributionLattice TransducerHead::lattice(const Matrix& enc, const LabelSequence& y,
                                            Cache* cache) const {
    validate_labels(y, vocab_size());
    if (static_cast<std::size_t>(enc.cols()) != joint.enc_dim()) {
        throw ShapeError("transducer head: encoder dimension mismatch");
    }
    if (cache == nullptr) return joint.forward(enc, predictor.forward(y), nullptr);
    cache->pred_out = predictor.forward(y, &cache->predictor);
    return joint.forward(enc, cache->pred_out, &cache->joint);
}

Matrix TransducerHead::backward(const Cache& cache, const Matrix& enc, std::span<const double> d_logz,
                                TransducerHead& grads) const {
    Matrix d_enc;
    Matrix d_pred;
    joint.backward(cache.joint, enc, cache.pred_out, d_logz, grads.joint, d_enc, d_pred);
    predictor.backward(cache.predictor, d_pred, grads.predictor);
    return d_enc;
}

std::vector<double> TransducerHead::initial_state() const {
    const Vector h = predictor.step(Vector::Zero(idx(predictor.hidden_dim())), kBlank);
    return {h.data(), h.data() + h.size()};
}

std::vector<double> TransducerHead::advance(std::span<const double> state, int token) const {
    const Vector prev = Eigen::Map<const Vector>(state.data(), idx(state.size()));
    const Vector h = predictor.step(prev, token);
    return {h.data(), h.data() + h.size()};
}

void TransducerHead::log_probs(std::span<const double> frame, std::span<const double> state,
                               std::span<double> out) const {
    joint.node_log_probs(frame, state, out);
}

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ValidationError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

}  // namespace mtkd
