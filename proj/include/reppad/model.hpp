#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "reppad/adam.hpp"
#include "reppad/padding.hpp"
#include "reppad/rng.hpp"
#include "reppad/tensor.hpp"

namespace reppad {

enum class Backbone { gru, self_attention };

inline Backbone backbone_from_string(const std::string& s) {
  if (s == "gru") return Backbone::gru;
  if (s == "self_attention" || s == "sa") return Backbone::self_attention;
  throw std::invalid_argument("unknown backbone '" + s + "' (expected gru|self_attention)");
}

inline std::string to_string(Backbone b) {
  return b == Backbone::gru ? "gru" : "self_attention";
}

struct ModelConfig {
  Backbone backbone = Backbone::self_attention;
  int embed_dim = 64;
  int max_len = 50;
  int num_blocks = 2;   // self_attention
  int num_heads = 1;    // self_attention
  int hidden_dim = 64;  // gru
  double dropout = 0.2;
  bool leakage_mask = false;

  void validate() const {
    if (embed_dim < 1 || max_len < 1 || num_blocks < 1 || num_heads < 1 || hidden_dim < 1)
      throw std::invalid_argument("model config: dimensions must be positive");
    if (embed_dim % num_heads != 0)
      throw std::invalid_argument("model config: num_heads must divide embed_dim");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw std::invalid_argument("model config: dropout must be in [0, 1)");
    if (leakage_mask && backbone == Backbone::gru)
      throw std::invalid_argument(
          "model config: leakage_mask requires the self_attention backbone "
          "(a recurrence has no attention matrix to mask)");
  }
};

// mask[b*n*n + i*n + j] != 0 <=> query i of sample b may attend key j:
// causal (j <= i) and the key holds a real item (ids != 0).
inline std::vector<uint8_t> build_attention_mask(const std::vector<int32_t>& ids,
                                                 int64_t b, int64_t n) {
  std::vector<uint8_t> mask(static_cast<size_t>(b * n * n), 0);
  for (int64_t s = 0; s < b; ++s) {
    const int32_t* row = ids.data() + s * n;
    uint8_t* m = mask.data() + s * n * n;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j <= i; ++j) m[i * n + j] = row[j] != 0;
  }
  return mask;
}

// Restricts sample s so queries attend only within their own repetition block:
// key j must satisfy j >= greatest segment start <= i.
inline void apply_leakage_mask(std::vector<uint8_t>& mask, int64_t n, int64_t s,
                               const std::vector<int32_t>& segment_starts) {
  if (segment_starts.empty() || segment_starts.front() != 0)
    throw std::invalid_argument("apply_leakage_mask: segment starts must begin at 0");
  uint8_t* m = mask.data() + s * n * n;
  size_t seg = 0;
  for (int64_t i = 0; i < n; ++i) {
    while (seg + 1 < segment_starts.size() && segment_starts[seg + 1] <= i) ++seg;
    const int64_t lo = segment_starts[seg];
    for (int64_t j = 0; j < lo; ++j) m[i * n + j] = 0;
  }
}

// Hidden states for every (sample, position); the two backbones emit rows in
// different physical orders, so lookups go through row_of.
template <class T>
struct Encoded {
  Tensor<T> rows;  // [batch*len, embed_dim]
  int64_t batch = 0, len = 0;
  bool step_major = false;  // gru emits t-major rows, self_attention b-major
  int64_t row_of(int64_t b, int64_t t) const {
    return step_major ? t * batch + b : b * len + t;
  }
};

template <class T>
struct Model {
  ModelConfig cfg;
  int32_t vocab = 0;  // items are 1..vocab; row 0 is the padding/delimiter token
  std::vector<Param<T>> params;

  Tensor<T> item_emb;  // [vocab+1, embed_dim]

  // gru gate weights (input and hidden halves kept separate)
  Tensor<T> W_ir, W_iz, W_in, W_hr, W_hz, W_hn;
  Tensor<T> b_ir, b_iz, b_in, b_hr, b_hz, b_hn;
  Tensor<T> W_proj;  // only when hidden_dim != embed_dim
  bool has_proj = false;

  // self-attention stack
  Tensor<T> pos_emb;  // [max_len, embed_dim]
  struct Block {
    Tensor<T> W_q, W_k, W_v, W_o;
    Tensor<T> ln1_gain, ln1_bias;
    Tensor<T> ff1_W, ff1_b, ff2_W, ff2_b;
    Tensor<T> ln2_gain, ln2_bias;
  };
  std::vector<Block> blocks;
  Tensor<T> ln_f_gain, ln_f_bias;

  Model() = default;

  Model(const ModelConfig& c, int32_t vocab_size, Rng& init_rng) : cfg(c), vocab(vocab_size) {
    cfg.validate();
    if (vocab < 1) throw std::invalid_argument("model: vocab must be >= 1");
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)));
    auto uni = [&](const std::string& name, Shape shape) {
      Tensor<T> t = Tensor<T>::uniform(std::move(shape), -bound, bound, init_rng, true);
      params.push_back({name, t});
      return t;
    };
    auto fixed = [&](const std::string& name, Shape shape, T v) {
      Tensor<T> t = Tensor<T>::full(std::move(shape), v, true);
      params.push_back({name, t});
      return t;
    };
    const int64_t d = cfg.embed_dim, h = cfg.hidden_dim, n = cfg.max_len;
    item_emb = uni("item_embedding", {vocab + 1, d});
    if (cfg.backbone == Backbone::gru) {
      W_ir = uni("gru.W_ir", {d, h});
      W_iz = uni("gru.W_iz", {d, h});
      W_in = uni("gru.W_in", {d, h});
      W_hr = uni("gru.W_hr", {h, h});
      W_hz = uni("gru.W_hz", {h, h});
      W_hn = uni("gru.W_hn", {h, h});
      b_ir = uni("gru.b_ir", {h});
      b_iz = uni("gru.b_iz", {h});
      b_in = uni("gru.b_in", {h});
      b_hr = uni("gru.b_hr", {h});
      b_hz = uni("gru.b_hz", {h});
      b_hn = uni("gru.b_hn", {h});
      has_proj = h != d;
      if (has_proj) W_proj = uni("gru.W_proj", {h, d});
    } else {
      pos_emb = uni("pos_embedding", {n, d});
      blocks.resize(static_cast<size_t>(cfg.num_blocks));
      for (int k = 0; k < cfg.num_blocks; ++k) {
        const std::string p = "blk" + std::to_string(k) + ".";
        Block& blk = blocks[static_cast<size_t>(k)];
        blk.W_q = uni(p + "W_q", {d, d});
        blk.W_k = uni(p + "W_k", {d, d});
        blk.W_v = uni(p + "W_v", {d, d});
        blk.W_o = uni(p + "W_o", {d, d});
        blk.ln1_gain = fixed(p + "ln1_gain", {d}, T(1));
        blk.ln1_bias = fixed(p + "ln1_bias", {d}, T(0));
        blk.ff1_W = uni(p + "ff1_W", {d, d});
        blk.ff1_b = uni(p + "ff1_b", {d});
        blk.ff2_W = uni(p + "ff2_W", {d, d});
        blk.ff2_b = uni(p + "ff2_b", {d});
        blk.ln2_gain = fixed(p + "ln2_gain", {d}, T(1));
        blk.ln2_bias = fixed(p + "ln2_bias", {d}, T(0));
      }
      ln_f_gain = fixed("ln_f_gain", {d}, T(1));
      ln_f_bias = fixed("ln_f_bias", {d}, T(0));
    }
  }

  int64_t param_count() const {
    int64_t c = 0;
    for (const auto& p : params) c += p.tensor.numel();
    return c;
  }
};

// Hidden states over a b-major [batch*max_len] id block. segments must carry one
// segment-start list per sample when the config enables the leakage mask.
template <class T>
Encoded<T> encode(Tape<T>& tape, Model<T>& m, const std::vector<int32_t>& ids,
                  int64_t batch, const std::vector<std::vector<int32_t>>* segments,
                  Rng& dropout_rng, bool training) {
  const int64_t n = m.cfg.max_len, d = m.cfg.embed_dim;
  if (batch < 1) throw std::invalid_argument("encode: empty batch");
  if (static_cast<int64_t>(ids.size()) != batch * n)
    throw std::invalid_argument("encode: expected " + std::to_string(batch * n) +
                                " ids for batch " + std::to_string(batch) + " x len " +
                                std::to_string(n) + ", got " +
                                std::to_string(ids.size()));
  Encoded<T> out;
  out.batch = batch;
  out.len = n;

  if (m.cfg.backbone == Backbone::gru) {
    out.step_major = true;
    Tensor<T> hdn = Tensor<T>::zeros({batch, m.cfg.hidden_dim});
    std::vector<Tensor<T>> steps;
    steps.reserve(static_cast<size_t>(n));
    std::vector<int32_t> ids_t(static_cast<size_t>(batch));
    for (int64_t t = 0; t < n; ++t) {
      for (int64_t b = 0; b < batch; ++b)
        ids_t[static_cast<size_t>(b)] = ids[static_cast<size_t>(b * n + t)];
      Tensor<T> x = embedding_lookup(tape, m.item_emb, ids_t, {batch});
      x = dropout(tape, x, m.cfg.dropout, dropout_rng, training);
      Tensor<T> r = sigmoid_op(
          tape, add(tape, add(tape, add(tape, matmul(tape, x, m.W_ir), matmul(tape, hdn, m.W_hr)), m.b_ir), m.b_hr));
      Tensor<T> z = sigmoid_op(
          tape, add(tape, add(tape, add(tape, matmul(tape, x, m.W_iz), matmul(tape, hdn, m.W_hz)), m.b_iz), m.b_hz));
      Tensor<T> cand = tanh_op(
          tape, add(tape, add(tape, matmul(tape, x, m.W_in), m.b_in),
                    mul(tape, r, add(tape, matmul(tape, hdn, m.W_hn), m.b_hn))));
      Tensor<T> keep = mul(tape, z, hdn);
      Tensor<T> take = mul(tape, scalar_affine(tape, z, T(-1), T(1)), cand);
      hdn = add(tape, keep, take);
      steps.push_back(hdn);
    }
    Tensor<T> rows = concat_rows(tape, steps);  // [n*batch, hidden]
    if (m.has_proj) rows = matmul(tape, rows, m.W_proj);
    out.rows = rows;
    return out;
  }

  if (m.cfg.leakage_mask && segments == nullptr)
    throw std::invalid_argument("encode: leakage mask needs per-sample segment starts");
  if (segments != nullptr && static_cast<int64_t>(segments->size()) != batch)
    throw std::invalid_argument("encode: one segment list per sample required");

  auto mask = std::make_shared<std::vector<uint8_t>>(build_attention_mask(ids, batch, n));
  if (m.cfg.leakage_mask)
    for (int64_t s = 0; s < batch; ++s)
      apply_leakage_mask(*mask, n, s, (*segments)[static_cast<size_t>(s)]);

  Tensor<T> x = embedding_lookup(tape, m.item_emb, ids, {batch, n});
  x = add(tape, x, m.pos_emb);
  x = dropout(tape, x, m.cfg.dropout, dropout_rng, training);
  for (auto& blk : m.blocks) {
    Tensor<T> q = matmul(tape, x, blk.W_q);
    Tensor<T> k = matmul(tape, x, blk.W_k);
    Tensor<T> v = matmul(tape, x, blk.W_v);
    Tensor<T> a = masked_attention(tape, q, k, v, mask, m.cfg.num_heads);
    a = matmul(tape, a, blk.W_o);
    a = dropout(tape, a, m.cfg.dropout, dropout_rng, training);
    x = layer_norm(tape, add(tape, x, a), blk.ln1_gain, blk.ln1_bias);
    Tensor<T> f = relu_op(tape, add(tape, matmul(tape, x, blk.ff1_W), blk.ff1_b));
    f = add(tape, matmul(tape, f, blk.ff2_W), blk.ff2_b);
    f = dropout(tape, f, m.cfg.dropout, dropout_rng, training);
    x = layer_norm(tape, add(tape, x, f), blk.ln2_gain, blk.ln2_bias);
  }
  x = layer_norm(tape, x, m.ln_f_gain, m.ln_f_bias);
  out.rows = reshape(tape, x, {batch * n, d});
  return out;
}

// Tied-weight scores: each row dotted with every item embedding row -> [R, vocab+1].
template <class T>
Tensor<T> tied_scores(Tape<T>& tape, Model<T>& m, const Tensor<T>& rows) {
  return matmul_nt(tape, rows, m.item_emb);
}

struct StepStats {
  double loss = 0.0;
  int64_t active = 0;
  bool skipped = false;
};

namespace detail {
constexpr int64_t kLogitChunkRows = 4096;

template <class T>
void flatten_batch(const std::vector<PaddedSample>& batch, int64_t n,
                   std::vector<int32_t>& ids) {
  ids.clear();
  ids.reserve(batch.size() * static_cast<size_t>(n));
  for (const auto& s : batch) {
    if (static_cast<int64_t>(s.input.size()) != n ||
        static_cast<int64_t>(s.target.size()) != n ||
        static_cast<int64_t>(s.loss_mask.size()) != n)
      throw std::invalid_argument("batch sample length does not match model max_len " +
                                  std::to_string(n));
    ids.insert(ids.end(), s.input.begin(), s.input.end());
  }
}

template <class T>
std::vector<std::vector<int32_t>> collect_segments(const std::vector<PaddedSample>& batch) {
  std::vector<std::vector<int32_t>> segs;
  segs.reserve(batch.size());
  for (const auto& s : batch) segs.push_back(s.segment_starts);
  return segs;
}
}  // namespace detail

// Masked cross-entropy over every supervised position, averaged across the batch;
// one Adam update. A batch with no supervised position skips the update.
template <class T>
StepStats train_step(Model<T>& m, const std::vector<PaddedSample>& batch,
                     AdamState<T>& opt, Rng& dropout_rng) {
  const int64_t n = m.cfg.max_len;
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::vector<int32_t> ids;
  detail::flatten_batch<T>(batch, n, ids);

  StepStats stats;
  std::vector<std::pair<int64_t, int32_t>> active;  // (encoded row, target)
  for (size_t b = 0; b < batch.size(); ++b)
    for (int64_t t = 0; t < n; ++t)
      if (batch[b].loss_mask[static_cast<size_t>(t)])
        active.emplace_back(0, batch[b].target[static_cast<size_t>(t)]);
  if (active.empty()) {
    stats.skipped = true;
    return stats;
  }

  for (auto& p : m.params) p.tensor.clear_grad();

  Tape<T> tape;
  std::vector<std::vector<int32_t>> segs;
  const std::vector<std::vector<int32_t>>* segp = nullptr;
  if (m.cfg.leakage_mask) {
    segs = detail::collect_segments<T>(batch);
    segp = &segs;
  }
  Encoded<T> enc = encode(tape, m, ids, static_cast<int64_t>(batch.size()), segp,
                          dropout_rng, true);

  size_t a = 0;
  for (size_t b = 0; b < batch.size(); ++b)
    for (int64_t t = 0; t < n; ++t)
      if (batch[b].loss_mask[static_cast<size_t>(t)])
        active[a++].first = enc.row_of(static_cast<int64_t>(b), t);

  const int64_t total = static_cast<int64_t>(active.size());
  Tensor<T> loss;
  for (int64_t lo = 0; lo < total; lo += detail::kLogitChunkRows) {
    const int64_t hi = std::min(total, lo + detail::kLogitChunkRows);
    std::vector<int32_t> rows_idx;
    std::vector<int32_t> targets;
    rows_idx.reserve(static_cast<size_t>(hi - lo));
    targets.reserve(static_cast<size_t>(hi - lo));
    for (int64_t i = lo; i < hi; ++i) {
      rows_idx.push_back(static_cast<int32_t>(active[static_cast<size_t>(i)].first));
      targets.push_back(active[static_cast<size_t>(i)].second);
    }
    Tensor<T> rows = gather_rows(tape, enc.rows, rows_idx);
    Tensor<T> scores = tied_scores(tape, m, rows);
    std::vector<uint8_t> all_on(targets.size(), 1);
    Tensor<T> part = masked_cross_entropy(tape, scores, targets, all_on);
    const T w = static_cast<T>(static_cast<double>(hi - lo) / static_cast<double>(total));
    if (lo == 0) loss = scalar_affine(tape, part, w, T(0));
    else loss = add_scaled(tape, loss, part, T(1), w);
  }

  tape.backward(loss);
  adam_step(opt, m.params);
  stats.loss = static_cast<double>(loss.data()[0]);
  stats.active = total;
  return stats;
}

// Full-vocabulary scores at the last position of each sample, b-major [B * (vocab+1)].
// Dropout off, nothing recorded.
template <class T>
std::vector<T> score_last(Model<T>& m, const std::vector<PaddedSample>& batch) {
  const int64_t n = m.cfg.max_len;
  if (batch.empty()) throw std::invalid_argument("score_last: empty batch");
  std::vector<int32_t> ids;
  detail::flatten_batch<T>(batch, n, ids);
  Tape<T> tape(false);
  Rng rng(0);  // dropout disabled in eval mode; stream unused
  std::vector<std::vector<int32_t>> segs;
  const std::vector<std::vector<int32_t>>* segp = nullptr;
  if (m.cfg.leakage_mask) {
    segs = detail::collect_segments<T>(batch);
    segp = &segs;
  }
  Encoded<T> enc = encode(tape, m, ids, static_cast<int64_t>(batch.size()), segp, rng, false);
  std::vector<int32_t> rows_idx;
  rows_idx.reserve(batch.size());
  for (size_t b = 0; b < batch.size(); ++b)
    rows_idx.push_back(static_cast<int32_t>(enc.row_of(static_cast<int64_t>(b), n - 1)));
  Tensor<T> rows = gather_rows(tape, enc.rows, rows_idx);
  Tensor<T> scores = tied_scores(tape, m, rows);
  return std::vector<T>(scores.data(), scores.data() + scores.numel());
}

// ----------------------------------------------------------------------------
// checkpoints: versioned binary with a config echo; load validates every shape
// ----------------------------------------------------------------------------

namespace detail {
constexpr uint32_t kCheckpointMagic = 0x5250434Bu;  // "RPCK"
constexpr uint32_t kCheckpointVersion = 1;

template <class V>
void write_pod(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
}  // namespace detail

template <class T>
void save_checkpoint(const Model<T>& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  using detail::write_pod;
  write_pod(os, detail::kCheckpointMagic);
  write_pod(os, detail::kCheckpointVersion);
  write_pod(os, static_cast<uint8_t>(sizeof(T)));
  write_pod(os, static_cast<uint8_t>(m.cfg.backbone == Backbone::gru ? 0 : 1));
  write_pod(os, static_cast<uint8_t>(m.cfg.leakage_mask ? 1 : 0));
  write_pod(os, static_cast<int32_t>(m.cfg.embed_dim));
  write_pod(os, static_cast<int32_t>(m.cfg.max_len));
  write_pod(os, static_cast<int32_t>(m.cfg.num_blocks));
  write_pod(os, static_cast<int32_t>(m.cfg.num_heads));
  write_pod(os, static_cast<int32_t>(m.cfg.hidden_dim));
  write_pod(os, m.cfg.dropout);
  write_pod(os, m.vocab);
  write_pod(os, static_cast<uint32_t>(m.params.size()));
  for (const auto& p : m.params) {
    write_pod(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod(os, static_cast<uint32_t>(p.tensor.rank()));
    for (size_t i = 0; i < static_cast<size_t>(p.tensor.rank()); ++i)
      write_pod(os, static_cast<int64_t>(p.tensor.dim(static_cast<int>(i))));
    os.write(reinterpret_cast<const char*>(p.tensor.data()),
             static_cast<std::streamsize>(sizeof(T) * p.tensor.numel()));
  }
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

template <class T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  using detail::read_pod;
  if (read_pod<uint32_t>(is) != detail::kCheckpointMagic)
    throw std::runtime_error("checkpoint: '" + path + "' is not a model checkpoint");
  const uint32_t version = read_pod<uint32_t>(is);
  if (version != detail::kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint8_t dtype = read_pod<uint8_t>(is);
  if (dtype != sizeof(T))
    throw std::runtime_error("checkpoint: stored scalar width " + std::to_string(dtype) +
                             " does not match requested width " +
                             std::to_string(sizeof(T)));
  ModelConfig cfg;
  cfg.backbone = read_pod<uint8_t>(is) == 0 ? Backbone::gru : Backbone::self_attention;
  cfg.leakage_mask = read_pod<uint8_t>(is) != 0;
  cfg.embed_dim = read_pod<int32_t>(is);
  cfg.max_len = read_pod<int32_t>(is);
  cfg.num_blocks = read_pod<int32_t>(is);
  cfg.num_heads = read_pod<int32_t>(is);
  cfg.hidden_dim = read_pod<int32_t>(is);
  cfg.dropout = read_pod<double>(is);
  const int32_t vocab = read_pod<int32_t>(is);
  Rng scratch(0);
  Model<T> m(cfg, vocab, scratch);
  const uint32_t count = read_pod<uint32_t>(is);
  if (count != m.params.size())
    throw std::runtime_error("checkpoint: holds " + std::to_string(count) +
                             " parameters, config implies " +
                             std::to_string(m.params.size()));
  for (auto& p : m.params) {
    const uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != p.name)
      throw std::runtime_error("checkpoint: expected parameter '" + p.name + "', found '" +
                               name + "'");
    const uint32_t ndim = read_pod<uint32_t>(is);
    Shape shape(ndim);
    for (auto& dd : shape) dd = read_pod<int64_t>(is);
    if (shape != p.tensor.shape())
      throw std::runtime_error("checkpoint: parameter '" + p.name + "' has shape " +
                               shape_str(shape) + ", config implies " +
                               shape_str(p.tensor.shape()));
    is.read(reinterpret_cast<char*>(p.tensor.data()),
            static_cast<std::streamsize>(sizeof(T) * p.tensor.numel()));
    if (!is) throw std::runtime_error("checkpoint: truncated parameter data");
  }
  return m;
}

}  // namespace reppad
