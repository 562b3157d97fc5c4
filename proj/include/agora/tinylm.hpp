#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "agora/corpus.hpp"

namespace tinylm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// --- tokenizer --------------------------------------------------------------

// Closed whitespace-tokenized vocabulary. Unknown tokens are an error, never an
// <unk> bucket: the worlds are closed by construction.
struct Vocab {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  static Vocab from_tokens(std::vector<std::string> toks);
  // Special tokens + evidence markers + the world's cues, relations and entities.
  static Vocab for_world(const corpus::World& world, int n_evidence_markers = 10);

  int size() const { return int(tokens.size()); }
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index.count(token) > 0; }
  std::vector<int> encode(const std::string& text) const;
  std::string decode(std::span<const int> ids) const;

  int eos() const { return id("<eos>"); }
  int sep() const { return id("<sep>"); }
};

// --- parameters --------------------------------------------------------------

struct ModelConfig {
  int n_layers = 4;
  int d_model = 64;
  int d_ffn = 256;
  int n_heads = 4;
  int vocab_size = 0;
  int context_length = 128;
};

struct LayerParams {
  Vec ln1_g, ln1_b;        // pre-attention layer norm
  Mat w_q, w_k, w_v, w_o;  // d_model x d_model, bias-free
  Vec ln2_g, ln2_b;        // pre-FFN layer norm (the gamma of the key readout)
  Mat w_fc;                // d_ffn x d_model
  Mat w_proj;              // d_model x d_ffn; the matrix the rank-one edit rewrites
};

struct ModelParams {
  ModelConfig cfg;
  Vocab vocab;
  Mat tok_emb;  // vocab x d_model
  Mat pos_emb;  // context x d_model
  std::vector<LayerParams> layers;
  Vec lnf_g, lnf_b;
  Mat w_out;  // vocab x d_model
};

ModelParams init_model(const Vocab& vocab, const ModelConfig& cfg, std::uint64_t seed);
ModelParams zeros_like(const ModelParams& p);
bool same_params(const ModelParams& a, const ModelParams& b);  // bitwise
std::size_t param_count(const ModelParams& p);

// Visits every parameter tensor in a fixed order. F is called as
// f(const std::string& name, Mat-or-Vec&); works on const and mutable params.
template <class Params, class F>
void visit_tensors(Params& p, F&& f) {
  f(std::string("tok_emb"), p.tok_emb);
  f(std::string("pos_emb"), p.pos_emb);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    auto& L = p.layers[l];
    f(pre + "ln1_g", L.ln1_g);
    f(pre + "ln1_b", L.ln1_b);
    f(pre + "w_q", L.w_q);
    f(pre + "w_k", L.w_k);
    f(pre + "w_v", L.w_v);
    f(pre + "w_o", L.w_o);
    f(pre + "ln2_g", L.ln2_g);
    f(pre + "ln2_b", L.ln2_b);
    f(pre + "w_fc", L.w_fc);
    f(pre + "w_proj", L.w_proj);
  }
  f(std::string("lnf_g"), p.lnf_g);
  f(std::string("lnf_b"), p.lnf_b);
  f(std::string("w_out"), p.w_out);
}

// Binary checkpoint: JSON header (config, vocab, tensor directory) + raw
// little-endian doubles. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& p);
ModelParams load_checkpoint(const std::filesystem::path& path);

// --- forward pass ------------------------------------------------------------

// Replaces the FFN output (W_proj * activation) at one (layer, position) with a
// fixed vector; the hook behind value-vector optimization.
struct FfnOverride {
  int layer = 0;
  int position = 0;
  Vec value;
};

struct ForwardTrace {
  std::vector<int> tokens;
  Mat logits;  // T x vocab

  // Quantities exposed for key extraction: per layer l, the layer input
  // h^{(l-1)}, the attention output a^{(l)}, and the FFN activation
  // sigma(w_fc * ln2(a + h)) feeding w_proj.
  std::vector<Mat> layer_in;  // T x d_model
  std::vector<Mat> attn_out;  // T x d_model
  std::vector<Mat> ffn_act;   // T x d_ffn

  // Remaining intermediates kept for the exact backward pass.
  Mat x0;
  std::vector<Mat> n1, qm, km, vm, ctx, resid, n2, ffn_pre, ffn_out;
  std::vector<std::vector<Mat>> att;  // per layer, per head: T x T row-stochastic
  Mat hfinal, nf;
  std::optional<FfnOverride> ffn_override;
};

ForwardTrace forward(const ModelParams& p, std::span<const int> tokens,
                     const FfnOverride* ffn_override = nullptr);

// Probability vector over the vocabulary for the next token after `position`.
Vec distribution_at(const ForwardTrace& trace, int position);

// --- backward pass -----------------------------------------------------------

// Seeds the backward pass with dL/dlogits (T x vocab). Accumulates parameter
// gradients into *grads (ModelParams-shaped, nullable) and, when the trace ran
// with an FFN override, the gradient on the override vector into *d_override.
void backward(const ModelParams& p, const ForwardTrace& trace, const Mat& dlogits,
              ModelParams* grads, Vec* d_override = nullptr);

struct LossGrads {
  double nll = 0.0;
  ModelParams grads;
};

// Mean next-token negative log-likelihood over all predicted positions of the
// batch, with exact gradients.
LossGrads loss_and_grads(const ModelParams& p, const std::vector<std::vector<int>>& batch);
double batch_nll(const ModelParams& p, const std::vector<std::vector<int>>& batch);

// log P(tokens[answer_start..] | preceding tokens), summed over answer positions.
double sequence_logprob(const ModelParams& p, std::span<const int> tokens, int answer_start);
// Same value; also accumulates coeff * d(logprob)/d(params) into *grads.
double sequence_logprob_grad(const ModelParams& p, std::span<const int> tokens, int answer_start,
                             double coeff, ModelParams* grads);

// --- text-level operations ---------------------------------------------------

// Product of next-token probabilities of the answer tokens given the prompt.
double answer_prob(const ModelParams& p, const std::string& prompt, const std::string& answer);

struct DecodeConfig {
  bool greedy = true;
  double temperature = 1.0;
  int max_tokens = 8;
  std::uint64_t seed = 0;
};

std::string generate(const ModelParams& p, const std::string& prompt, const DecodeConfig& decode);
std::vector<int> generate_ids(const ModelParams& p, std::span<const int> prompt,
                              const DecodeConfig& decode);

// --- training ----------------------------------------------------------------

struct TrainConfig {
  int steps = 6000;
  int batch_size = 32;
  double lr = 1e-3;
  double target_recall = 0.95;
  bool enforce_target = true;

  // In-context persuadability mixture. Context lines teach the model to copy a
  // claim asserted earlier in its window; the copy rates are the desk-scale
  // analogue of the acceptance rates the probe conditions are calibrated to.
  int n_evidence_ctx = 900;
  int n_bare_ctx = 600;
  int n_mixed_ctx = 600;
  int n_style = 500;
  double p_copy_evidence = 0.9;
  double p_copy_bare = 0.5;
  double p_copy_mixed = 0.85;
};

struct TrainingCorpus {
  std::vector<std::vector<int>> sequences;
};

TrainingCorpus build_training_corpus(const corpus::World& world, const Vocab& vocab,
                                     const TrainConfig& cfg, std::uint64_t seed);

// Trains a fresh model on the world until fact recall meets the target.
// Deterministic given (world, cfg, seed). Throws util::TrainingFailed (carrying
// the final recall) if the step budget is exhausted below target.
ModelParams train_lm(const corpus::World& world, const TrainConfig& cfg, std::uint64_t seed);

// Greedy recall accuracy over all facts x templates of the world.
double fact_recall(const ModelParams& p, const corpus::World& world);

// Full-parameter fine-tuning of a single layer on the given (prompt, answer)
// statements; the direct fine-tuning baseline for knowledge injection.
ModelParams finetune_layer(const ModelParams& base, int layer,
                           const std::vector<std::pair<std::string, std::string>>& statements,
                           int steps, double lr);

}  // namespace tinylm
