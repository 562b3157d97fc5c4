#include <cmath>
#include <stdexcept>

#include "agora/tinylm.hpp"

namespace tinylm {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
}

// Backward of y = g .* (x - mu)/sigma + b; adds the input gradient into
// dx_accum and, when requested, the affine-parameter gradients into dg/db.
void layernorm_backward(const Mat& x, const Vec& g, const Mat& dy, Mat& dx_accum, Vec* dg,
                        Vec* db) {
  const Eigen::Index d = x.cols();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().sum() / double(d);
    double inv = 1.0 / std::sqrt(var + kLnEps);
    Eigen::ArrayXd xhat = (x.row(i).transpose().array() - mu) * inv;
    Eigen::ArrayXd dyi = dy.row(i).transpose().array();
    if (dg) dg->array() += dyi * xhat;
    if (db) db->array() += dyi;
    Eigen::ArrayXd dxhat = dyi * g.array();
    double m1 = dxhat.mean();
    double m2 = (dxhat * xhat).mean();
    dx_accum.row(i).array() += (inv * (dxhat - m1 - xhat * m2)).transpose();
  }
}

}  // namespace

void backward(const ModelParams& p, const ForwardTrace& tr, const Mat& dlogits,
              ModelParams* grads, Vec* d_override) {
  const int T = int(tr.tokens.size());
  const int L = p.cfg.n_layers;
  const int H = p.cfg.n_heads;
  const int d = p.cfg.d_model;
  const int dh = d / H;
  const double scale = 1.0 / std::sqrt(double(dh));

  if (dlogits.rows() != T || dlogits.cols() != p.cfg.vocab_size)
    throw std::invalid_argument("backward: dlogits shape mismatch");
  if (d_override) {
    if (!tr.ffn_override) throw std::invalid_argument("backward: trace has no FFN override");
    if (d_override->size() == 0) *d_override = Vec::Zero(d);
    if (d_override->size() != d) throw std::invalid_argument("backward: d_override dimension");
  }

  // Output head and final norm.
  Mat dnf = dlogits * p.w_out;
  if (grads) grads->w_out.noalias() += dlogits.transpose() * tr.nf;
  Mat dx = Mat::Zero(T, d);
  layernorm_backward(tr.hfinal, p.lnf_g, dnf, dx, grads ? &grads->lnf_g : nullptr,
                     grads ? &grads->lnf_b : nullptr);

  for (int l = L - 1; l >= 0; --l) {
    const LayerParams& W = p.layers[std::size_t(l)];
    LayerParams* G = grads ? &grads->layers[std::size_t(l)] : nullptr;

    // x_out = resid + m
    Mat dm = dx;
    Mat dresid = dx;
    if (tr.ffn_override && tr.ffn_override->layer == l) {
      const int pos = tr.ffn_override->position;
      if (d_override) d_override->noalias() += dm.row(pos).transpose();
      dm.row(pos).setZero();
    }

    // m = act * w_proj^T
    if (G) G->w_proj.noalias() += dm.transpose() * tr.ffn_act[std::size_t(l)];
    Mat dact = dm * W.w_proj;
    Mat dpre =
        dact.array() * tr.ffn_pre[std::size_t(l)].unaryExpr([](double z) { return gelu_grad(z); }).array();
    if (G) G->w_fc.noalias() += dpre.transpose() * tr.n2[std::size_t(l)];
    Mat dn2 = dpre * W.w_fc;
    layernorm_backward(tr.resid[std::size_t(l)], W.ln2_g, dn2, dresid, G ? &G->ln2_g : nullptr,
                       G ? &G->ln2_b : nullptr);

    // resid = layer_in + attn
    Mat da = dresid;
    Mat dx_in = dresid;

    // attn = ctx * w_o^T
    if (G) G->w_o.noalias() += da.transpose() * tr.ctx[std::size_t(l)];
    Mat dctx = da * W.w_o;

    Mat dq = Mat::Zero(T, d), dk = Mat::Zero(T, d), dv = Mat::Zero(T, d);
    for (int h = 0; h < H; ++h) {
      const Mat& A = tr.att[std::size_t(l)][std::size_t(h)];
      auto qh = tr.qm[std::size_t(l)].middleCols(h * dh, dh);
      auto kh = tr.km[std::size_t(l)].middleCols(h * dh, dh);
      auto vh = tr.vm[std::size_t(l)].middleCols(h * dh, dh);
      Mat dctx_h = dctx.middleCols(h * dh, dh);

      Mat dA = dctx_h * vh.transpose();
      dv.middleCols(h * dh, dh).noalias() += A.transpose() * dctx_h;

      // Row softmax backward; masked entries carry A == 0 and drop out.
      Mat dS(T, T);
      for (int i = 0; i < T; ++i) {
        double dot = (dA.row(i).array() * A.row(i).array()).sum();
        dS.row(i) = A.row(i).array() * (dA.row(i).array() - dot);
      }
      dq.middleCols(h * dh, dh).noalias() += dS * kh * scale;
      dk.middleCols(h * dh, dh).noalias() += dS.transpose() * qh * scale;
    }

    Mat dn1 = dq * W.w_q + dk * W.w_k + dv * W.w_v;
    if (G) {
      G->w_q.noalias() += dq.transpose() * tr.n1[std::size_t(l)];
      G->w_k.noalias() += dk.transpose() * tr.n1[std::size_t(l)];
      G->w_v.noalias() += dv.transpose() * tr.n1[std::size_t(l)];
    }
    layernorm_backward(tr.layer_in[std::size_t(l)], W.ln1_g, dn1, dx_in, G ? &G->ln1_g : nullptr,
                       G ? &G->ln1_b : nullptr);
    dx = std::move(dx_in);
  }

  if (grads) {
    for (int i = 0; i < T; ++i) {
      grads->tok_emb.row(tr.tokens[std::size_t(i)]) += dx.row(i);
      grads->pos_emb.row(i) += dx.row(i);
    }
  }
}

LossGrads loss_and_grads(const ModelParams& p, const std::vector<std::vector<int>>& batch) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
  std::size_t total = 0;
  for (const auto& s : batch)
    if (s.size() >= 2) total += s.size() - 1;
  if (total == 0) throw std::invalid_argument("loss_and_grads: no predicted positions in batch");

  LossGrads out{0.0, zeros_like(p)};
  const double inv_total = 1.0 / double(total);
  for (const auto& s : batch) {
    if (s.size() < 2) continue;
    ForwardTrace tr = forward(p, s);
    const int T = int(s.size());
    Mat dlogits = Mat::Zero(T, p.cfg.vocab_size);
    for (int i = 1; i < T; ++i) {
      Vec prob = distribution_at(tr, i - 1);
      out.nll -= std::log(std::max(prob(s[std::size_t(i)]), 1e-300));
      dlogits.row(i - 1) = prob.transpose() * inv_total;
      dlogits(i - 1, s[std::size_t(i)]) -= inv_total;
    }
    backward(p, tr, dlogits, &out.grads);
  }
  out.nll *= inv_total;
  return out;
}

double batch_nll(const ModelParams& p, const std::vector<std::vector<int>>& batch) {
  if (batch.empty()) throw std::invalid_argument("batch_nll: empty batch");
  std::size_t total = 0;
  double nll = 0.0;
  for (const auto& s : batch) {
    if (s.size() < 2) continue;
    total += s.size() - 1;
    ForwardTrace tr = forward(p, s);
    for (std::size_t i = 1; i < s.size(); ++i)
      nll -= std::log(std::max(distribution_at(tr, int(i) - 1)(s[i]), 1e-300));
  }
  if (total == 0) throw std::invalid_argument("batch_nll: no predicted positions in batch");
  return nll / double(total);
}

double sequence_logprob(const ModelParams& p, std::span<const int> tokens, int answer_start) {
  if (answer_start < 1 || answer_start >= int(tokens.size()))
    throw std::invalid_argument("sequence_logprob: bad answer_start");
  ForwardTrace tr = forward(p, tokens);
  double logp = 0.0;
  for (int i = answer_start; i < int(tokens.size()); ++i)
    logp += std::log(std::max(distribution_at(tr, i - 1)(tokens[std::size_t(i)]), 1e-300));
  return logp;
}

double sequence_logprob_grad(const ModelParams& p, std::span<const int> tokens, int answer_start,
                             double coeff, ModelParams* grads) {
  if (answer_start < 1 || answer_start >= int(tokens.size()))
    throw std::invalid_argument("sequence_logprob_grad: bad answer_start");
  ForwardTrace tr = forward(p, tokens);
  const int T = int(tokens.size());
  Mat dlogits = Mat::Zero(T, p.cfg.vocab_size);
  double logp = 0.0;
  for (int i = answer_start; i < T; ++i) {
    Vec prob = distribution_at(tr, i - 1);
    logp += std::log(std::max(prob(tokens[std::size_t(i)]), 1e-300));
    // d logp / d logits = onehot - softmax
    dlogits.row(i - 1) = -coeff * prob.transpose();
    dlogits(i - 1, tokens[std::size_t(i)]) += coeff;
  }
  if (grads) backward(p, tr, dlogits, grads);
  return logp;
}

}  // namespace tinylm
