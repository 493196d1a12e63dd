#pragma once

// Token classifier: token + position embeddings, a stack of encoder layers
// whose attention is LESA, and a LayerNorm classification head. Forward and
// backward are written out by hand; optimisation is AdamW.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "numlesa/blinding.hpp"
#include "numlesa/errors.hpp"
#include "numlesa/label_space.hpp"
#include "numlesa/lesa.hpp"
#include "numlesa/matrix.hpp"
#include "numlesa/metrics.hpp"
#include "numlesa/tokenizer.hpp"

namespace numlesa {

// ---------------------------------------------------------------------------
// Vocabulary

struct Vocab {
  static constexpr int kUnk = 0;
  static constexpr int kSentinel = 1;
  static constexpr int kPlaceholder = 2;

  std::vector<std::string> words{"[UNK]", "[CLS]", kDefaultPlaceholder};
  std::unordered_map<std::string, int> index{{"[UNK]", 0}, {"[CLS]", 1}, {kDefaultPlaceholder, 2}};

  static std::string normalize(std::string_view w) { return detail::ascii_lower(w); }

  std::size_t size() const { return words.size(); }

  int add(const std::string& raw) {
    const auto w = normalize(raw);
    auto it = index.find(w);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(words.size());
    words.push_back(w);
    index.emplace(w, id);
    return id;
  }

  int id_of(std::string_view raw) const {
    auto it = index.find(normalize(raw));
    return it == index.end() ? kUnk : it->second;
  }

  std::vector<int> encode(const std::vector<std::string>& texts) const {
    std::vector<int> ids;
    ids.reserve(texts.size());
    for (const auto& t : texts) ids.push_back(id_of(t));
    return ids;
  }

  // Closed-world vocabulary: words seen at least `min_count` times, ordered
  // by descending frequency then bytewise, plus every keyword token.
  static Vocab build(const std::vector<std::vector<std::string>>& sentences,
                     const KeywordTable& keywords, std::size_t min_count = 2,
                     const std::string& placeholder = kDefaultPlaceholder) {
    Vocab v;
    if (placeholder != kDefaultPlaceholder) {
      v.words[kPlaceholder] = normalize(placeholder);
      v.index.erase(kDefaultPlaceholder);
      v.index.emplace(v.words[kPlaceholder], kPlaceholder);
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& s : sentences)
      for (const auto& t : s) ++counts[normalize(t)];
    std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [w, c] : sorted)
      if (c >= min_count) v.add(w);
    for (const auto& words : keywords.keywords)
      for (const auto& kw : words)
        for (const auto& t : tokenize(kw)) v.add(t.text);
    return v;
  }
};

// ---------------------------------------------------------------------------
// Configuration and parameters

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_dim = 0;  // 0 means 4 * dim
  double dropout = 0.1;
  std::size_t max_sequence_length = 128;
  std::uint64_t seed = 1;
  bool lesa = true;
  // Per-layer override of `lesa`; empty means every layer follows it.
  std::vector<std::uint8_t> lesa_layers;
  double init_std = 0.02;
  // "sinusoidal" (fixed table) or "learned" (trained table).
  std::string positions = "sinusoidal";

  std::size_t head_dim() const { return heads ? dim / heads : 0; }
  std::size_t ffn() const { return ffn_dim ? ffn_dim : 4 * dim; }
  bool layer_uses_lesa(std::size_t l) const {
    return lesa_layers.empty() ? lesa : lesa_layers.at(l) != 0;
  }

  void validate() const {
    if (vocab_size < 3) throw ConfigError("vocab_size must include the special tokens");
    if (dim == 0 || heads == 0 || dim % heads != 0)
      throw ConfigError("dim must be a positive multiple of heads");
    if (layers == 0) throw ConfigError("layers must be >= 1");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
    if (max_sequence_length == 0) throw ConfigError("max_sequence_length must be >= 1");
    if (!lesa_layers.empty() && lesa_layers.size() != layers)
      throw ConfigError("lesa_layers needs one flag per layer");
    if (positions != "sinusoidal" && positions != "learned")
      throw ConfigError("positions must be 'sinusoidal' or 'learned'");
  }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size}, {"dim", dim},
            {"heads", heads},           {"layers", layers},
            {"ffn_dim", ffn()},         {"dropout", dropout},
            {"max_sequence_length", max_sequence_length},
            {"seed", seed},             {"lesa", lesa},
            {"lesa_layers", lesa_layers}, {"label_rows", kNumClasses},
            {"init_std", init_std},     {"positions", positions}};
  }

  static ModelConfig from_json(const nlohmann::json& j) { return from_json(j, ModelConfig()); }

  static ModelConfig from_json(const nlohmann::json& j, ModelConfig c) {
    try {
      c.vocab_size = j.value("vocab_size", c.vocab_size);
      c.dim = j.value("dim", c.dim);
      c.heads = j.value("heads", c.heads);
      c.layers = j.value("layers", c.layers);
      c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
      c.dropout = j.value("dropout", c.dropout);
      c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
      c.seed = j.value("seed", c.seed);
      c.lesa = j.value("lesa", c.lesa);
      c.lesa_layers = j.value("lesa_layers", c.lesa_layers);
      c.init_std = j.value("init_std", c.init_std);
      c.positions = j.value("positions", c.positions);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
  }
};

struct LayerParams {
  LesaParams attn;
  Matrix ln1_g, ln1_b;
  Matrix w1, b1, w2, b2;
  Matrix ln2_g, ln2_b;
};

struct ModelParams {
  Matrix embed;  // vocab x D
  Matrix pos;    // learned positions, (max_len + 1) x D; empty when fixed
  std::vector<LayerParams> layers;
  Matrix head_ln_g, head_ln_b;
  Matrix head_w, head_b;
};

// Calls f(name, matrix, decays) for every trainable tensor in a fixed order.
template <typename P, typename F>
void visit_params(P& p, F&& f) {
  f("embed", p.embed, true);
  f("pos", p.pos, true);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    f(pre + "w_q", L.attn.w_q, true);
    f(pre + "w_k", L.attn.w_k, true);
    f(pre + "w_v", L.attn.w_v, true);
    f(pre + "ln1_g", L.ln1_g, false);
    f(pre + "ln1_b", L.ln1_b, false);
    f(pre + "w1", L.w1, true);
    f(pre + "b1", L.b1, false);
    f(pre + "w2", L.w2, true);
    f(pre + "b2", L.b2, false);
    f(pre + "ln2_g", L.ln2_g, false);
    f(pre + "ln2_b", L.ln2_b, false);
  }
  f("head.ln_g", p.head_ln_g, false);
  f("head.ln_b", p.head_ln_b, false);
  f("head.w", p.head_w, true);
  f("head.b", p.head_b, false);
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  visit_params(z, [](const std::string&, Matrix& m, bool) { m.fill(0.0); });
  return z;
}

struct TokenClassifier {
  ModelConfig config;
  Vocab vocab;
  KeywordTable keywords;
  bool blinded = true;
  Matrix label_matrix;  // X_l, fixed after initialisation
  Matrix positions;     // fixed sinusoidal table; empty when learned
  ModelParams params;

  const Matrix& position_table() const { return params.pos.empty() ? positions : params.pos; }

  std::size_t param_count() const {
    std::size_t n = 0;
    visit_params(params, [&](const std::string&, const Matrix& m, bool) { n += m.size(); });
    return n;
  }
};

// Mean of the initial embeddings of a keyword's tokens.
inline std::vector<double> keyword_embedding(const Vocab& vocab, const Matrix& embed,
                                             const std::string& keyword) {
  std::vector<double> out(embed.cols(), 0.0);
  const auto toks = tokenize(keyword);
  if (toks.empty()) return out;
  for (const auto& t : toks) {
    const auto r = embed.row(static_cast<std::size_t>(vocab.id_of(t.text)));
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += r[k];
  }
  for (double& v : out) v /= static_cast<double>(toks.size());
  return out;
}

// Fixed sine/cosine table: even columns sin(i / 10000^(k/D)), odd columns cos.
inline Matrix sinusoidal_positions(std::size_t rows, std::size_t dim) {
  Matrix t(rows, dim);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < dim; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k - k % 2) / static_cast<double>(dim));
      t(i, k) = k % 2 == 0 ? std::sin(static_cast<double>(i) * freq)
                           : std::cos(static_cast<double>(i) * freq);
    }
  return t;
}

inline TokenClassifier make_model(ModelConfig config, Vocab vocab,
                                  KeywordTable keywords = KeywordTable::defaults(),
                                  bool blinded = true) {
  config.vocab_size = vocab.size();
  config.validate();
  TokenClassifier m;
  m.config = config;
  m.vocab = std::move(vocab);
  m.keywords = std::move(keywords);
  m.blinded = blinded;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> nd(0.0, config.init_std);
  auto normal = [&](std::size_t r, std::size_t c) {
    Matrix w(r, c);
    for (double& v : w.data()) v = nd(rng);
    return w;
  };
  const std::size_t D = config.dim, F = config.ffn();
  auto& p = m.params;
  p.embed = normal(config.vocab_size, D);
  if (config.positions == "learned")
    p.pos = normal(config.max_sequence_length + 1, D);
  else
    m.positions = sinusoidal_positions(config.max_sequence_length + 1, D);
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerParams L;
    L.attn.w_k = normal(D, D);
    L.attn.w_q = normal(D, D);
    L.attn.w_v = normal(D, D);
    L.attn.heads = config.heads;
    L.ln1_g = Matrix(1, D, 1.0);
    L.ln1_b = Matrix(1, D);
    L.w1 = normal(D, F);
    L.b1 = Matrix(1, F);
    L.w2 = normal(F, D);
    L.b2 = Matrix(1, D);
    L.ln2_g = Matrix(1, D, 1.0);
    L.ln2_b = Matrix(1, D);
    p.layers.push_back(std::move(L));
  }
  p.head_ln_g = Matrix(1, D, 1.0);
  p.head_ln_b = Matrix(1, D);
  p.head_w = normal(D, kNumClasses);
  p.head_b = Matrix(1, kNumClasses);

  const Matrix& embed = p.embed;
  const Vocab& vv = m.vocab;
  m.label_matrix = build_label_matrix(
      m.keywords, [&](const std::string& kw) { return keyword_embedding(vv, embed, kw); }, D);
  return m;
}

// ---------------------------------------------------------------------------
// Building blocks

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

inline Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, LayerNormCache& c) {
  const std::size_t n = x.rows(), D = x.cols();
  c.xhat = Matrix(n, D);
  c.rstd.assign(n, 0.0);
  Matrix y(n, D);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t k = 0; k < D; ++k) mean += x(i, k);
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t k = 0; k < D; ++k) var += (x(i, k) - mean) * (x(i, k) - mean);
    var /= static_cast<double>(D);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    c.rstd[i] = rstd;
    for (std::size_t k = 0; k < D; ++k) {
      c.xhat(i, k) = (x(i, k) - mean) * rstd;
      y(i, k) = c.xhat(i, k) * g(0, k) + b(0, k);
    }
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& g, const LayerNormCache& c,
                                  Matrix& dg, Matrix& db) {
  const std::size_t n = dy.rows(), D = dy.cols();
  Matrix dx(n, D);
  std::vector<double> dxhat(D);
  for (std::size_t i = 0; i < n; ++i) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t k = 0; k < D; ++k) {
      dg(0, k) += dy(i, k) * c.xhat(i, k);
      db(0, k) += dy(i, k);
      dxhat[k] = dy(i, k) * g(0, k);
      s1 += dxhat[k];
      s2 += dxhat[k] * c.xhat(i, k);
    }
    const double inv_d = 1.0 / static_cast<double>(D);
    for (std::size_t k = 0; k < D; ++k)
      dx(i, k) = c.rstd[i] * (dxhat[k] - s1 * inv_d - c.xhat(i, k) * s2 * inv_d);
  }
  return dx;
}

inline Matrix add_bias(Matrix y, const Matrix& b) {
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t k = 0; k < y.cols(); ++k) y(i, k) += b(0, k);
  return y;
}

inline void accumulate_bias_grad(const Matrix& dy, Matrix& db) {
  for (std::size_t i = 0; i < dy.rows(); ++i)
    for (std::size_t k = 0; k < dy.cols(); ++k) db(0, k) += dy(i, k);
}

// Exact (erf-based) GELU.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_grad(double x) {
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::acos(-1.0));
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline Matrix hadamard(Matrix a, const Matrix& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] *= b.data()[i];
  return a;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct LayerCache {
  LesaActivations attn;
  Matrix drop1;  // inverted-dropout scale per entry; empty when inactive
  LayerNormCache ln1;
  Matrix h1;
  Matrix f_pre, f_act;
  Matrix drop2;
  LayerNormCache ln2;
};

struct ForwardCache {
  std::vector<int> ids;
  std::vector<LayerCache> layers;
  LayerNormCache head_ln;
  Matrix z;       // normalised token rows (sentinel dropped)
  Matrix logits;  // L x 8
};

struct ForwardMode {
  bool train = false;
  std::mt19937_64* rng = nullptr;  // dropout source, used when train
};

inline Matrix embed_tokens(const std::vector<int>& ids, const Matrix& table) {
  Matrix x(ids.size() + 1, table.cols());
  auto copy_row = [&](std::size_t dst, int id) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
      throw OutOfVocab("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(table.rows()));
    const auto r = table.row(static_cast<std::size_t>(id));
    std::copy(r.begin(), r.end(), x.row(dst).begin());
  };
  copy_row(0, Vocab::kSentinel);
  for (std::size_t i = 0; i < ids.size(); ++i) copy_row(i + 1, ids[i]);
  return x;
}

namespace detail {

inline Matrix dropout_mask(std::size_t r, std::size_t c, double rate, const ForwardMode& mode) {
  if (!mode.train || rate <= 0.0 || mode.rng == nullptr) return {};
  Matrix m(r, c);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& v : m.data()) v = keep(*mode.rng) ? scale : 0.0;
  return m;
}

}  // namespace detail

inline ForwardCache forward(const TokenClassifier& model, const std::vector<int>& ids,
                            ForwardMode mode = {}) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  if (ids.size() > cfg.max_sequence_length)
    throw SequenceTooLong(std::to_string(ids.size()) + " tokens exceed the maximum of " +
                          std::to_string(cfg.max_sequence_length));
  ForwardCache c;
  c.ids = ids;
  if (ids.empty()) {
    c.logits = Matrix(0, kNumClasses);
    return c;
  }
  Matrix x = embed_tokens(ids, p.embed);
  const Matrix& pos = model.position_table();
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < x.cols(); ++k) x(i, k) += pos(i, k);

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& L = p.layers[l];
    LayerCache lc;
    LesaOptions opt;
    opt.use_cosim = cfg.layer_uses_lesa(l);
    lc.attn = lesa_forward(x, model.label_matrix, L.attn, opt);
    Matrix a = lc.attn.out;
    lc.drop1 = detail::dropout_mask(a.rows(), a.cols(), cfg.dropout, mode);
    if (!lc.drop1.empty()) a = hadamard(std::move(a), lc.drop1);
    Matrix r1 = x + a;
    lc.h1 = layer_norm(r1, L.ln1_g, L.ln1_b, lc.ln1);
    lc.f_pre = add_bias(matmul(lc.h1, L.w1), L.b1);
    lc.f_act = lc.f_pre;
    for (double& v : lc.f_act.data()) v = gelu(v);
    Matrix f = add_bias(matmul(lc.f_act, L.w2), L.b2);
    lc.drop2 = detail::dropout_mask(f.rows(), f.cols(), cfg.dropout, mode);
    if (!lc.drop2.empty()) f = hadamard(std::move(f), lc.drop2);
    x = layer_norm(lc.h1 + f, L.ln2_g, L.ln2_b, lc.ln2);
    c.layers.push_back(std::move(lc));
  }
  c.z = layer_norm(drop_first_row(x), p.head_ln_g, p.head_ln_b, c.head_ln);
  c.logits = add_bias(matmul(c.z, p.head_w), p.head_b);
  return c;
}

inline Matrix logits(const TokenClassifier& model, const std::vector<int>& ids) {
  return forward(model, ids).logits;
}

inline std::vector<ClassLabel> argmax_labels(const Matrix& logits) {
  std::vector<ClassLabel> out;
  out.reserve(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    out.push_back(label_from_index(
        static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin())));
  }
  return out;
}

inline std::vector<ClassLabel> predict(const TokenClassifier& model, const std::vector<int>& ids) {
  return argmax_labels(logits(model, ids));
}

// Summed token cross-entropy; writes d(loss * scale)/d(logits) into `grad`.
inline double cross_entropy(const Matrix& logits, const std::vector<ClassLabel>& labels,
                            double scale, Matrix& grad) {
  if (labels.size() != logits.rows())
    throw LengthMismatch("labels/logits length mismatch: " + std::to_string(labels.size()) +
                         " vs " + std::to_string(logits.rows()));
  grad = Matrix(logits.rows(), logits.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    const std::size_t y = index_of(labels[i]);
    loss += log_z - r[y];
    for (std::size_t k = 0; k < r.size(); ++k)
      grad(i, k) = (std::exp(r[k] - log_z) - (k == y ? 1.0 : 0.0)) * scale;
  }
  return loss;
}

// Accumulates parameter gradients of a scalar whose gradient w.r.t. the
// logits is `dlogits`.
inline void backward(const TokenClassifier& model, const ForwardCache& c, const Matrix& dlogits,
                     ModelParams& grads) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  if (c.ids.empty()) return;
  if (dlogits.rows() != c.logits.rows() || dlogits.cols() != c.logits.cols())
    throw ShapeError("upstream gradient " + dlogits.shape_str() + " does not match logits " +
                     c.logits.shape_str());

  grads.head_w += matmul_tn(c.z, dlogits);
  accumulate_bias_grad(dlogits, grads.head_b);
  Matrix dz = matmul_nt(dlogits, p.head_w);
  Matrix dtok = layer_norm_backward(dz, p.head_ln_g, c.head_ln, grads.head_ln_g, grads.head_ln_b);

  const std::size_t rows = c.ids.size() + 1, D = cfg.dim;
  Matrix dx(rows, D);
  for (std::size_t i = 1; i < rows; ++i)
    for (std::size_t k = 0; k < D; ++k) dx(i, k) = dtok(i - 1, k);

  for (std::size_t l = cfg.layers; l-- > 0;) {
    const auto& L = p.layers[l];
    const auto& lc = c.layers[l];
    auto& G = grads.layers[l];

    Matrix dr2 = layer_norm_backward(dx, L.ln2_g, lc.ln2, G.ln2_g, G.ln2_b);
    Matrix dh1 = dr2;
    Matrix df = lc.drop2.empty() ? dr2 : hadamard(dr2, lc.drop2);
    G.w2 += matmul_tn(lc.f_act, df);
    accumulate_bias_grad(df, G.b2);
    Matrix dact = matmul_nt(df, L.w2);
    for (std::size_t i = 0; i < dact.size(); ++i) dact.data()[i] *= gelu_grad(lc.f_pre.data()[i]);
    G.w1 += matmul_tn(lc.h1, dact);
    accumulate_bias_grad(dact, G.b1);
    dh1 += matmul_nt(dact, L.w1);

    Matrix dr1 = layer_norm_backward(dh1, L.ln1_g, lc.ln1, G.ln1_g, G.ln1_b);
    Matrix da = lc.drop1.empty() ? dr1 : hadamard(dr1, lc.drop1);
    auto g = lesa_backward(lc.attn, L.attn, da);
    G.attn.w_q += g.w_q;
    G.attn.w_k += g.w_k;
    G.attn.w_v += g.w_v;
    dx = dr1 + g.x;
  }

  // X_l is a constant buffer, so only the token rows feed the tables.
  for (std::size_t i = 0; i < rows; ++i) {
    const auto id = static_cast<std::size_t>(i == 0 ? Vocab::kSentinel : c.ids[i - 1]);
    for (std::size_t k = 0; k < D; ++k) {
      grads.embed(id, k) += dx(i, k);
      if (!grads.pos.empty()) grads.pos(i, k) += dx(i, k);
    }
  }
}

// ---------------------------------------------------------------------------
// Optimiser

struct AdamW {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  ModelParams m, v;
  std::size_t t = 0;

  void step(ModelParams& params, ModelParams& grads) {
    if (t == 0) {
      m = zeros_like(params);
      v = zeros_like(params);
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    std::vector<Matrix*> ps, gs, ms, vs;
    std::vector<bool> decays;
    visit_params(params, [&](const std::string&, Matrix& x, bool d) {
      ps.push_back(&x);
      decays.push_back(d);
    });
    visit_params(grads, [&](const std::string&, Matrix& x, bool) { gs.push_back(&x); });
    visit_params(m, [&](const std::string&, Matrix& x, bool) { ms.push_back(&x); });
    visit_params(v, [&](const std::string&, Matrix& x, bool) { vs.push_back(&x); });
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto& P = ps[k]->data();
      const auto& G = gs[k]->data();
      auto& M = ms[k]->data();
      auto& V = vs[k]->data();
      const double wd = decays[k] ? weight_decay : 0.0;
      for (std::size_t i = 0; i < P.size(); ++i) {
        M[i] = beta1 * M[i] + (1.0 - beta1) * G[i];
        V[i] = beta2 * V[i] + (1.0 - beta2) * G[i] * G[i];
        const double update = (M[i] / bc1) / (std::sqrt(V[i] / bc2) + eps) + wd * P[i];
        P[i] -= lr * update;
      }
    }
  }
};

inline double global_norm(ModelParams& grads) {
  double s = 0.0;
  visit_params(grads, [&](const std::string&, Matrix& g, bool) {
    for (double v : g.data()) s += v * v;
  });
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Training

struct Example {
  std::vector<int> ids;
  std::vector<ClassLabel> labels;
};

struct TrainConfig {
  double learning_rate = 3e-5;
  double weight_decay = 0.01;
  std::size_t patience = 4;
  std::size_t max_epochs = 100;
  std::array<double, 3> split{0.70, 0.15, 0.15};
  std::size_t batch_size = 16;
  std::vector<std::uint64_t> seeds{1};
  double grad_clip = 1.0;  // global-norm clip; 0 disables

  void validate() const {
    if (!(learning_rate >= 0)) throw ConfigError("learning_rate must be >= 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    const double s = split[0] + split[1] + split[2];
    if (std::abs(s - 1.0) > 1e-9 || split[0] <= 0 || split[1] < 0 || split[2] < 0)
      throw ConfigError("split fractions must be non-negative and sum to 1");
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate}, {"weight_decay", weight_decay},
            {"patience", patience},           {"max_epochs", max_epochs},
            {"split", split},                 {"batch_size", batch_size},
            {"seeds", seeds},                 {"grad_clip", grad_clip}};
  }

  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig()); }

  static TrainConfig from_json(const nlohmann::json& j, TrainConfig c) {
    try {
      c.learning_rate = j.value("learning_rate", c.learning_rate);
      c.weight_decay = j.value("weight_decay", c.weight_decay);
      c.patience = j.value("patience", c.patience);
      c.max_epochs = j.value("max_epochs", c.max_epochs);
      c.split = j.value("split", c.split);
      c.batch_size = j.value("batch_size", c.batch_size);
      c.seeds = j.value("seeds", c.seeds);
      c.grad_clip = j.value("grad_clip", c.grad_clip);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("train config: ") + e.what());
    }
    return c;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  ClassScores val_f1{};
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_macro_f1 = -1.0;
  bool early_stopped = false;
};

inline std::string history_csv_header() {
  std::string h = "epoch,train_loss,val_macro_f1";
  for (auto n : kLabelNames) h += ",f1_" + std::string(n);
  return h;
}

inline std::string history_csv_line(const EpochRecord& r) {
  char buf[64];
  std::string line = std::to_string(r.epoch);
  std::snprintf(buf, sizeof buf, ",%.6f,%.6f", r.train_loss, r.val_macro_f1);
  line += buf;
  for (double f : r.val_f1) {
    std::snprintf(buf, sizeof buf, ",%.6f", f);
    line += buf;
  }
  return line;
}

inline ConfusionCounts evaluate(const TokenClassifier& model, const std::vector<Example>& data) {
  ConfusionCounts c;
  for (const auto& ex : data) c.add(ex.labels, predict(model, ex.ids));
  return c;
}

// One optimiser step over `batch`; returns the mean token loss.
inline double train_step(TokenClassifier& model, AdamW& opt, const std::vector<const Example*>& batch,
                         std::mt19937_64& dropout_rng, double grad_clip) {
  std::size_t tokens = 0;
  for (const auto* ex : batch) tokens += ex->ids.size();
  if (tokens == 0) return 0.0;
  ModelParams grads = zeros_like(model.params);
  const double scale = 1.0 / static_cast<double>(tokens);
  double loss = 0.0;
  ForwardMode mode{true, &dropout_rng};
  for (const auto* ex : batch) {
    if (ex->ids.empty()) continue;
    auto cache = forward(model, ex->ids, mode);
    Matrix dlogits;
    loss += cross_entropy(cache.logits, ex->labels, scale, dlogits);
    backward(model, cache, dlogits, grads);
  }
  loss *= scale;
  if (!std::isfinite(loss)) throw DivergedLoss("non-finite training loss");
  if (grad_clip > 0) {
    const double n = global_norm(grads);
    if (!std::isfinite(n)) throw DivergedLoss("non-finite gradient norm");
    if (n > grad_clip)
      visit_params(grads, [&](const std::string&, Matrix& g, bool) { g *= grad_clip / n; });
  }
  opt.step(model.params, grads);
  return loss;
}

// Trains in place. On return the model holds the weights of the epoch with
// the best validation macro F1.
inline TrainResult train(TokenClassifier& model, const std::vector<Example>& train_set,
                         const std::vector<Example>& val_set, const TrainConfig& cfg,
                         std::uint64_t seed,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw EmptyDataset("training set is empty");
  if (val_set.empty()) throw EmptyDataset("validation set is empty");

  AdamW opt;
  opt.lr = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;
  std::mt19937_64 shuffle_rng(seed * 2 + 1), dropout_rng(seed * 2 + 2);

  TrainResult result;
  ModelParams best = model.params;
  std::size_t bad_epochs = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const Example*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(&train_set[order[k]]);
      loss_sum += train_step(model, opt, batch, dropout_rng, cfg.grad_clip);
      ++batches;
    }
    const auto f1 = f1_per_class(evaluate(model, val_set)).f1;
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), macro_f1(f1), f1};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_macro_f1 > result.best_val_macro_f1) {
      result.best_val_macro_f1 = rec.val_macro_f1;
      result.best_epoch = epoch;
      best = model.params;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  model.params = std::move(best);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointFormat = "numlesa-token-classifier";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.size()) throw FormatError("matrix data length does not match its shape");
  m.data() = std::move(data);
  return m;
}

inline nlohmann::json checkpoint_json(const TokenClassifier& model) {
  nlohmann::json params = nlohmann::json::object();
  visit_params(model.params, [&](const std::string& name, const Matrix& m, bool) {
    params[name] = matrix_to_json(m);
  });
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"config", model.config.to_json()},
          {"vocab", model.vocab.words},
          {"keywords", model.keywords.to_json()},
          {"blinded", model.blinded},
          {"label_matrix", matrix_to_json(model.label_matrix)},
          {"params", params}};
}

inline TokenClassifier model_from_checkpoint(const nlohmann::json& j) {
  try {
    if (j.at("format") != kCheckpointFormat) throw FormatError("not a token-classifier checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw FormatError("unsupported checkpoint version " + j.at("version").dump());
    Vocab vocab;
    vocab.words = j.at("vocab").get<std::vector<std::string>>();
    vocab.index.clear();
    for (std::size_t i = 0; i < vocab.words.size(); ++i)
      vocab.index.emplace(vocab.words[i], static_cast<int>(i));
    auto cfg = ModelConfig::from_json(j.at("config"));
    auto model = make_model(cfg, std::move(vocab), KeywordTable::from_json(j.at("keywords")),
                            j.at("blinded").get<bool>());
    model.label_matrix = matrix_from_json(j.at("label_matrix"));
    const auto& params = j.at("params");
    visit_params(model.params, [&](const std::string& name, Matrix& m, bool) {
      Matrix loaded = matrix_from_json(params.at(name));
      if (!loaded.same_shape(m))
        throw FormatError("parameter '" + name + "' has shape " + loaded.shape_str() +
                          ", expected " + m.shape_str());
      m = std::move(loaded);
    });
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const TokenClassifier& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
  out << checkpoint_json(model).dump() << '\n';
}

inline TokenClassifier load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint '" + path + "': " + e.what());
  }
  return model_from_checkpoint(j);
}

// ---------------------------------------------------------------------------
// Attention export

// NewAttn of one head in one layer as long-format CSV. Row/column 0 is the
// sentinel.
inline std::string export_attention(const TokenClassifier& model, const std::vector<int>& ids,
                                    const std::vector<std::string>& token_texts,
                                    std::size_t layer, std::size_t head) {
  if (layer >= model.config.layers)
    throw IndexOutOfRange("layer " + std::to_string(layer) + " >= " +
                          std::to_string(model.config.layers));
  if (head >= model.config.heads)
    throw IndexOutOfRange("head " + std::to_string(head) + " >= " +
                          std::to_string(model.config.heads));
  if (token_texts.size() != ids.size())
    throw LengthMismatch("token texts and ids differ in length");
  if (ids.empty()) throw EmptyDataset("attention export needs at least one token");
  const auto cache = forward(model, ids);
  const Matrix& a = cache.layers[layer].attn.head[head].new_attn;
  auto name = [&](std::size_t i) { return i == 0 ? std::string("[CLS]") : token_texts[i - 1]; };
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  };
  std::string csv = "row,col,row_token,col_token,value\n";
  char buf[40];
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", a(i, j));
      csv += std::to_string(i) + "," + std::to_string(j) + "," + quote(name(i)) + "," +
             quote(name(j)) + "," + buf + "\n";
    }
  return csv;
}

}  // namespace numlesa
