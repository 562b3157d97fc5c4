#include <cmath>
#include <random>
#include <stdexcept>

#include "agora/tinylm.hpp"
#include "agora/util.hpp"

namespace tinylm {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.7071067811865475244;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

// Row-wise layer norm: y = g .* (x - mu)/sqrt(var + eps) + b
Mat layernorm(const Mat& x, const Vec& g, const Vec& b) {
  Mat y(x.rows(), x.cols());
  const auto d = x.cols();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().sum() / double(d);
    double inv = 1.0 / std::sqrt(var + kLnEps);
    y.row(i) = ((x.row(i).array() - mu) * inv) * g.transpose().array() + b.transpose().array();
  }
  return y;
}

Vec softmax(const Eigen::RowVectorXd& logits) {
  Vec p = logits.transpose();
  double m = p.maxCoeff();
  p = (p.array() - m).exp();
  p /= p.sum();
  return p;
}

}  // namespace

ForwardTrace forward(const ModelParams& p, std::span<const int> tokens,
                     const FfnOverride* ffn_override) {
  const int T = int(tokens.size());
  if (T == 0) throw std::invalid_argument("forward: empty token sequence");
  if (T > p.cfg.context_length)
    throw std::invalid_argument("forward: sequence longer than context window");
  for (int t : tokens)
    if (t < 0 || t >= p.cfg.vocab_size) throw std::invalid_argument("forward: token id out of range");
  if (ffn_override) {
    if (ffn_override->layer < 0 || ffn_override->layer >= p.cfg.n_layers)
      throw std::invalid_argument("forward: override layer out of range");
    if (ffn_override->position < 0 || ffn_override->position >= T)
      throw std::invalid_argument("forward: override position out of range");
    if (ffn_override->value.size() != p.cfg.d_model)
      throw std::invalid_argument("forward: override vector has wrong dimension");
  }

  const int L = p.cfg.n_layers;
  const int H = p.cfg.n_heads;
  const int d = p.cfg.d_model;
  const int dh = d / H;
  const double scale = 1.0 / std::sqrt(double(dh));

  ForwardTrace tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  if (ffn_override) tr.ffn_override = *ffn_override;

  tr.x0.resize(T, d);
  for (int i = 0; i < T; ++i)
    tr.x0.row(i) = p.tok_emb.row(tokens[std::size_t(i)]) + p.pos_emb.row(i);

  tr.layer_in.resize(L);
  tr.attn_out.resize(L);
  tr.ffn_act.resize(L);
  tr.n1.resize(L);
  tr.qm.resize(L);
  tr.km.resize(L);
  tr.vm.resize(L);
  tr.ctx.resize(L);
  tr.resid.resize(L);
  tr.n2.resize(L);
  tr.ffn_pre.resize(L);
  tr.ffn_out.resize(L);
  tr.att.assign(std::size_t(L), {});

  Mat x = tr.x0;
  for (int l = 0; l < L; ++l) {
    const LayerParams& W = p.layers[std::size_t(l)];
    tr.layer_in[l] = x;

    Mat n1 = layernorm(x, W.ln1_g, W.ln1_b);
    Mat q = n1 * W.w_q.transpose();
    Mat k = n1 * W.w_k.transpose();
    Mat v = n1 * W.w_v.transpose();

    Mat ctx(T, d);
    tr.att[std::size_t(l)].resize(std::size_t(H));
    for (int h = 0; h < H; ++h) {
      auto qh = q.middleCols(h * dh, dh);
      auto kh = k.middleCols(h * dh, dh);
      auto vh = v.middleCols(h * dh, dh);
      Mat a(T, T);
      a.setZero();
      for (int i = 0; i < T; ++i) {
        Eigen::RowVectorXd scores = (qh.row(i) * kh.topRows(i + 1).transpose()) * scale;
        double m = scores.maxCoeff();
        Eigen::RowVectorXd e = (scores.array() - m).exp();
        a.row(i).head(i + 1) = e / e.sum();
      }
      ctx.middleCols(h * dh, dh) = a * vh;
      tr.att[std::size_t(l)][std::size_t(h)] = std::move(a);
    }
    Mat attn = ctx * W.w_o.transpose();

    Mat resid = x + attn;
    Mat n2 = layernorm(resid, W.ln2_g, W.ln2_b);
    Mat pre = n2 * W.w_fc.transpose();
    Mat act = pre.unaryExpr([](double z) { return gelu(z); });
    Mat m = act * W.w_proj.transpose();
    if (ffn_override && ffn_override->layer == l)
      m.row(ffn_override->position) = ffn_override->value.transpose();

    x = resid + m;

    tr.attn_out[l] = std::move(attn);
    tr.ffn_act[l] = act;
    tr.n1[l] = std::move(n1);
    tr.qm[l] = std::move(q);
    tr.km[l] = std::move(k);
    tr.vm[l] = std::move(v);
    tr.ctx[l] = std::move(ctx);
    tr.resid[l] = std::move(resid);
    tr.n2[l] = std::move(n2);
    tr.ffn_pre[l] = std::move(pre);
    tr.ffn_out[l] = std::move(m);
  }

  tr.hfinal = x;
  tr.nf = layernorm(x, p.lnf_g, p.lnf_b);
  tr.logits = tr.nf * p.w_out.transpose();
  return tr;
}

Vec distribution_at(const ForwardTrace& trace, int position) {
  if (position < 0 || position >= trace.logits.rows())
    throw std::invalid_argument("distribution_at: position out of range");
  return softmax(trace.logits.row(position));
}

double answer_prob(const ModelParams& p, const std::string& prompt, const std::string& answer) {
  std::vector<int> ids = p.vocab.encode(prompt);
  std::vector<int> ans = p.vocab.encode(answer);
  if (ids.empty()) throw std::invalid_argument("answer_prob: empty prompt");
  if (ans.empty()) throw std::invalid_argument("answer_prob: empty answer");
  const int prompt_len = int(ids.size());
  ids.insert(ids.end(), ans.begin(), ans.end());
  ForwardTrace tr = forward(p, ids);
  double prob = 1.0;
  for (int i = prompt_len; i < int(ids.size()); ++i)
    prob *= distribution_at(tr, i - 1)(ids[std::size_t(i)]);
  return prob;
}

std::vector<int> generate_ids(const ModelParams& p, std::span<const int> prompt,
                              const DecodeConfig& decode) {
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  if (int(prompt.size()) > p.cfg.context_length)
    throw std::invalid_argument("generate: prompt longer than context window");

  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  const int eos = p.vocab.eos();
  std::mt19937_64 rng(util::derive_seed(decode.seed, "decode"));

  for (int step = 0; step < decode.max_tokens; ++step) {
    if (int(seq.size()) >= p.cfg.context_length) break;
    ForwardTrace tr = forward(p, seq);
    int next;
    if (decode.greedy) {
      Eigen::Index arg;
      tr.logits.row(tr.logits.rows() - 1).maxCoeff(&arg);
      next = int(arg);
    } else {
      Vec probs = softmax(tr.logits.row(tr.logits.rows() - 1) / decode.temperature);
      double u = util::to_unit_interval(rng());
      double acc = 0.0;
      next = int(probs.size()) - 1;
      for (Eigen::Index i = 0; i < probs.size(); ++i) {
        acc += probs(i);
        if (u < acc) {
          next = int(i);
          break;
        }
      }
    }
    if (next == eos) break;
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

std::string generate(const ModelParams& p, const std::string& prompt, const DecodeConfig& decode) {
  std::vector<int> ids = p.vocab.encode(prompt);
  return p.vocab.decode(generate_ids(p, ids, decode));
}

}  // namespace tinylm
