#include <json.hpp>

#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "agora/tinylm.hpp"
#include "agora/util.hpp"

using nlohmann::json;

namespace tinylm {

Vocab Vocab::from_tokens(std::vector<std::string> toks) {
  Vocab v;
  v.tokens = std::move(toks);
  for (std::size_t i = 0; i < v.tokens.size(); ++i) {
    auto [it, fresh] = v.index.emplace(v.tokens[i], int(i));
    (void)it;
    if (!fresh) throw std::invalid_argument("duplicate vocabulary token: " + v.tokens[i]);
  }
  return v;
}

Vocab Vocab::for_world(const corpus::World& world, int n_evidence_markers) {
  std::vector<std::string> toks = {"<eos>", "<sep>", "discuss", "because", "is",
                                   "style_long", "style_short"};
  for (int i = 0; i < n_evidence_markers; ++i) toks.push_back("ev" + std::to_string(i));
  for (int v = 0; v < world.n_templates(); ++v) toks.push_back("cue" + std::to_string(v));
  for (const auto& r : world.relations) toks.push_back(r);
  for (const auto& e : world.entities) toks.push_back(e);
  return from_tokens(std::move(toks));
}

int Vocab::id(const std::string& token) const {
  auto it = index.find(token);
  if (it == index.end()) throw std::invalid_argument("unknown token: '" + token + "'");
  return it->second;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& t : util::split_ws(text)) out.push_back(id(t));
  return out;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> parts;
  parts.reserve(ids.size());
  for (int i : ids) {
    if (i < 0 || i >= size()) throw std::invalid_argument("token id out of range");
    parts.push_back(tokens[std::size_t(i)]);
  }
  return util::join(parts, " ");
}

ModelParams init_model(const Vocab& vocab, const ModelConfig& cfg_in, std::uint64_t seed) {
  ModelConfig cfg = cfg_in;
  cfg.vocab_size = vocab.size();
  if (cfg.n_layers < 3) throw std::invalid_argument("init_model: n_layers must be >= 3");
  if (cfg.d_model % cfg.n_heads != 0)
    throw std::invalid_argument("init_model: d_model must divide into heads");

  ModelParams p;
  p.cfg = cfg;
  p.vocab = vocab;

  std::mt19937_64 rng(util::derive_seed(seed, "model-init"));
  std::normal_distribution<double> dist(0.0, 0.02);
  auto fill = [&](Mat& m, int rows, int cols, double scale = 1.0) {
    m.resize(rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) m(r, c) = dist(rng) * scale;
  };

  fill(p.tok_emb, cfg.vocab_size, cfg.d_model);
  fill(p.pos_emb, cfg.context_length, cfg.d_model);
  const double resid_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  p.layers.resize(cfg.n_layers);
  for (auto& L : p.layers) {
    L.ln1_g = Vec::Ones(cfg.d_model);
    L.ln1_b = Vec::Zero(cfg.d_model);
    fill(L.w_q, cfg.d_model, cfg.d_model);
    fill(L.w_k, cfg.d_model, cfg.d_model);
    fill(L.w_v, cfg.d_model, cfg.d_model);
    fill(L.w_o, cfg.d_model, cfg.d_model, resid_scale);
    L.ln2_g = Vec::Ones(cfg.d_model);
    L.ln2_b = Vec::Zero(cfg.d_model);
    fill(L.w_fc, cfg.d_ffn, cfg.d_model);
    fill(L.w_proj, cfg.d_model, cfg.d_ffn, resid_scale);
  }
  p.lnf_g = Vec::Ones(cfg.d_model);
  p.lnf_b = Vec::Zero(cfg.d_model);
  fill(p.w_out, cfg.vocab_size, cfg.d_model);
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  visit_tensors(z, [](const std::string&, auto& t) { t.setZero(); });
  return z;
}

namespace {

struct TensorView {
  const double* data;
  Eigen::Index rows, cols;
};

std::vector<TensorView> tensor_views(const ModelParams& p) {
  std::vector<TensorView> out;
  visit_tensors(const_cast<ModelParams&>(p), [&](const std::string&, auto& t) {
    out.push_back({t.data(), t.rows(), t.cols()});
  });
  return out;
}

}  // namespace

bool same_params(const ModelParams& a, const ModelParams& b) {
  auto va = tensor_views(a);
  auto vb = tensor_views(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i].rows != vb[i].rows || va[i].cols != vb[i].cols) return false;
    if (std::memcmp(va[i].data, vb[i].data,
                    sizeof(double) * std::size_t(va[i].rows * va[i].cols)) != 0)
      return false;
  }
  return true;
}

std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  visit_tensors(const_cast<ModelParams&>(p), [&](const std::string&, auto& t) {
    n += std::size_t(t.size());
  });
  return n;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& p) {
  json header;
  header["format"] = "agora-checkpoint-v1";
  header["config"] = {{"n_layers", p.cfg.n_layers},     {"d_model", p.cfg.d_model},
                      {"d_ffn", p.cfg.d_ffn},           {"n_heads", p.cfg.n_heads},
                      {"vocab_size", p.cfg.vocab_size}, {"context_length", p.cfg.context_length}};
  header["vocab"] = p.vocab.tokens;
  json dir = json::array();
  std::uint64_t offset = 0;
  visit_tensors(const_cast<ModelParams&>(p), [&](const std::string& name, auto& t) {
    dir.push_back({{"name", name},
                   {"rows", std::int64_t(t.rows())},
                   {"cols", std::int64_t(t.cols())},
                   {"offset", offset}});
    offset += std::uint64_t(t.size()) * sizeof(double);
  });
  header["tensors"] = std::move(dir);

  std::string head = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  const char magic[8] = {'A', 'G', 'C', 'K', 'P', 'T', '0', '1'};
  out.write(magic, 8);
  std::uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&head_len), 8);
  out.write(head.data(), std::streamsize(head.size()));
  visit_tensors(const_cast<ModelParams&>(p), [&](const std::string&, auto& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              std::streamsize(sizeof(double) * std::size_t(t.size())));
  });
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "AGCKPT01", 8) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path.string());
  std::uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), 8);
  std::string head(head_len, '\0');
  in.read(head.data(), std::streamsize(head_len));
  json header = json::parse(head);

  ModelConfig cfg;
  cfg.n_layers = header["config"]["n_layers"].get<int>();
  cfg.d_model = header["config"]["d_model"].get<int>();
  cfg.d_ffn = header["config"]["d_ffn"].get<int>();
  cfg.n_heads = header["config"]["n_heads"].get<int>();
  cfg.vocab_size = header["config"]["vocab_size"].get<int>();
  cfg.context_length = header["config"]["context_length"].get<int>();
  Vocab vocab = Vocab::from_tokens(header["vocab"].get<std::vector<std::string>>());

  ModelParams p = init_model(vocab, cfg, 0);
  visit_tensors(p, [&](const std::string& name, auto& t) {
    bool found = false;
    for (const auto& rec : header["tensors"]) {
      if (rec["name"].get<std::string>() != name) continue;
      if (rec["rows"].get<std::int64_t>() != t.rows() || rec["cols"].get<std::int64_t>() != t.cols())
        throw std::runtime_error("checkpoint tensor shape mismatch: " + name);
      found = true;
      break;
    }
    if (!found) throw std::runtime_error("checkpoint missing tensor: " + name);
    in.read(reinterpret_cast<char*>(t.data()),
            std::streamsize(sizeof(double) * std::size_t(t.size())));
  });
  if (!in) throw std::runtime_error("checkpoint truncated: " + path.string());
  return p;
}

}  // namespace tinylm
