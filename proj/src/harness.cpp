#include "reppad/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"
#include "reppad/adam.hpp"
#include "reppad/synth.hpp"

namespace reppad {

AblationKind ablation_from_string(const std::string& s) {
  if (s == "none") return AblationKind::none;
  if (s == "alpha") return AblationKind::alpha;
  if (s == "beta") return AblationKind::beta;
  if (s == "gamma") return AblationKind::gamma;
  if (s == "leakage") return AblationKind::leakage;
  throw std::invalid_argument("unknown ablation '" + s + "' (alpha|beta|gamma|leakage)");
}

std::string to_string(AblationKind k) {
  switch (k) {
    case AblationKind::none: return "none";
    case AblationKind::alpha: return "alpha";
    case AblationKind::beta: return "beta";
    case AblationKind::gamma: return "gamma";
    case AblationKind::leakage: return "leakage";
  }
  return "none";
}

double metric_of(const MetricTable& t, const std::string& monitor) {
  if (monitor == "hr5") return t.hr5;
  if (monitor == "hr10") return t.hr10;
  if (monitor == "hr20") return t.hr20;
  if (monitor == "ndcg5") return t.ndcg5;
  if (monitor == "ndcg10") return t.ndcg10;
  if (monitor == "ndcg20") return t.ndcg20;
  throw std::invalid_argument("unknown monitor metric '" + monitor + "'");
}

PreparedData prepare_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.empty()) throw std::invalid_argument("no dataset path configured");
  LoadOptions opts;
  opts.user_col = cfg.user_col;
  opts.item_col = cfg.item_col;
  opts.time_col = cfg.time_col;
  opts.malformed_threshold = cfg.malformed_threshold;
  LoadResult loaded = load_interactions(cfg.dataset, opts);
  PreparedData d;
  d.raw_records = static_cast<int64_t>(loaded.records.size());
  std::vector<Interaction> kept = k_core_filter(std::move(loaded.records), cfg.kcore);
  d.kept_records = static_cast<int64_t>(kept.size());
  d.corpus = build_corpus(kept);
  d.split = leave_one_out_split(d.corpus);
  return d;
}

// ---------------------------------------------------------------------------
// counts.bin
// ---------------------------------------------------------------------------

namespace {
constexpr uint32_t kCountsMagic = 0x52504354;  // "RPCT"

template <class P>
void put_pod(std::ostream& os, P v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(P));
}

template <class P>
P take_pod(std::istream& is, const char* what) {
  P v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(P));
  if (!is) throw std::runtime_error(std::string("counts file truncated reading ") + what);
  return v;
}
}  // namespace

void write_counts_file(const std::string& path,
                       const std::vector<std::vector<uint16_t>>& counts_by_epoch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  put_pod<uint32_t>(os, kCountsMagic);
  put_pod<uint32_t>(os, 1);
  put_pod<uint32_t>(os, static_cast<uint32_t>(counts_by_epoch.size()));
  const uint32_t users =
      counts_by_epoch.empty() ? 0 : static_cast<uint32_t>(counts_by_epoch.front().size());
  put_pod<uint32_t>(os, users);
  for (const auto& row : counts_by_epoch) {
    if (row.size() != users)
      throw std::invalid_argument("counts rows must all cover the same users");
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size() * sizeof(uint16_t)));
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

std::vector<std::vector<uint16_t>> read_counts_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read counts file " + path);
  if (take_pod<uint32_t>(is, "magic") != kCountsMagic)
    throw std::runtime_error(path + " is not a counts file");
  const uint32_t version = take_pod<uint32_t>(is, "version");
  if (version != 1)
    throw std::runtime_error("counts file version " + std::to_string(version) + " unsupported");
  const uint32_t epochs = take_pod<uint32_t>(is, "epochs");
  const uint32_t users = take_pod<uint32_t>(is, "users");
  std::vector<std::vector<uint16_t>> out(epochs, std::vector<uint16_t>(users));
  for (auto& row : out) {
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(uint16_t)));
    if (!is) throw std::runtime_error("counts file truncated reading rows");
  }
  return out;
}

// ---------------------------------------------------------------------------
// sample construction
// ---------------------------------------------------------------------------

namespace {

std::vector<int32_t> slice(const std::vector<int32_t>& v, size_t from, size_t to) {
  return {v.begin() + static_cast<int64_t>(from), v.begin() + static_cast<int64_t>(to)};
}

// Zero-padded sample from a plain item list (consumes no randomness).
std::optional<PaddedSample> zero_sample(const std::vector<int32_t>& items, int max_len) {
  PadPolicy z;
  z.mode = PadMode::zero;
  z.max_len = max_len;
  Rng unused(0);
  return make_training_sample(items, z, unused);
}

// Repetition padding whose copies are other users' training pairs. Mirrors the
// in-policy branches; with a single user it degenerates to self-padding.
PaddedSample other_user_sample(const PadPolicy& pol, const std::vector<SplitSeq>& split,
                               size_t u, Rng& rng) {
  const auto& own = split[u].train;
  std::vector<int32_t> in = slice(own, 0, own.size() - 1);
  std::vector<int32_t> tg = slice(own, 1, own.size());
  const int n = pol.max_len;
  const int len = static_cast<int>(in.size());

  auto draw_other = [&]() -> size_t {
    if (split.size() < 2) return u;  // degenerate corpus: self-padding
    size_t v = rng.next_below(split.size() - 1);
    return v >= u ? v + 1 : v;
  };
  auto pair_of = [&](size_t v, std::vector<int32_t>& oi, std::vector<int32_t>& ot) {
    const auto& tr = split[v].train;
    oi = slice(tr, 0, tr.size() - 1);
    ot = slice(tr, 1, tr.size());
  };

  RawPadded raw;
  const int max_count = max_pad_count(len, n);
  const bool plus = pol.mode == PadMode::reppad_plus;
  if (plus && len > n - 2) {
    raw = {in, tg, {0}, 0};
  } else if (plus && max_count <= 1) {
    const int sub_len = pol.delimiter ? n - 1 - len : n - len;
    std::vector<int32_t> oi, ot, wi, wt;
    pair_of(draw_other(), oi, ot);
    if (static_cast<int>(oi.size()) > sub_len) {
      const int start = static_cast<int>(rng.randint(0, static_cast<int>(oi.size()) - sub_len));
      wi = subseq_window(oi, start, sub_len);
      wt = subseq_window(ot, start, sub_len);
    } else {
      wi = oi;
      wt = ot;
    }
    raw.input = wi;
    raw.input.push_back(0);
    raw.input.insert(raw.input.end(), in.begin(), in.end());
    raw.target = wt;
    raw.target.push_back(0);
    raw.target.insert(raw.target.end(), tg.begin(), tg.end());
    raw.seg_starts = {0, static_cast<int32_t>(wi.size()) + 1};
    raw.copies = 1;
  } else {
    const int m = resolve_m(pol.m_rule, pol.fix_k, max_count, rng);
    if (max_count <= 1 || m == 0) {
      raw = {in, tg, {0}, 0};
    } else {
      raw.copies = m;
      for (int c = 0; c < m; ++c) {
        std::vector<int32_t> oi, ot;
        pair_of(draw_other(), oi, ot);
        raw.seg_starts.push_back(static_cast<int32_t>(raw.input.size()));
        raw.input.insert(raw.input.end(), oi.begin(), oi.end());
        raw.target.insert(raw.target.end(), ot.begin(), ot.end());
        if (pol.delimiter) {
          raw.input.push_back(0);
          raw.target.push_back(0);
        }
      }
      raw.seg_starts.push_back(static_cast<int32_t>(raw.input.size()));
      raw.input.insert(raw.input.end(), in.begin(), in.end());
      raw.target.insert(raw.target.end(), tg.begin(), tg.end());
    }
  }
  return finalize_sample(raw, n);
}

AugmentSpec spec_of(const ExperimentConfig& cfg) {
  AugmentSpec s;
  if (cfg.augment_op != "cmr" && cfg.augment_op != "cmrsi")
    s.op = augment_op_from_string(cfg.augment_op);
  s.ratio = cfg.augment_ratio;
  s.window = cfg.augment_window;
  s.count = cfg.augment_count;
  return s;
}

}  // namespace

namespace harness_detail {

std::vector<PaddedSample> build_epoch_samples(
    const ExperimentConfig& cfg, const std::vector<SplitSeq>& split, int32_t vocab,
    int epoch, const ItemSimilarity* sim, AblationKind ablation,
    const std::vector<std::vector<uint16_t>>* alpha_counts,
    std::vector<uint16_t>* counts_out) {
  std::vector<PaddedSample> out;
  out.reserve(split.size());
  if (counts_out) counts_out->assign(split.size(), 0);

  if (ablation == AblationKind::alpha) {
    if (!alpha_counts) throw std::invalid_argument("alpha ablation needs recorded counts");
    if (epoch >= static_cast<int>(alpha_counts->size()))
      throw std::invalid_argument("alpha ablation: epoch " + std::to_string(epoch) +
                                  " beyond the " + std::to_string(alpha_counts->size()) +
                                  " recorded epochs");
    const auto& row = (*alpha_counts)[static_cast<size_t>(epoch)];
    if (row.size() != split.size())
      throw std::invalid_argument("alpha ablation: counts cover " +
                                  std::to_string(row.size()) + " users, corpus has " +
                                  std::to_string(split.size()));
    for (size_t u = 0; u < split.size(); ++u) {
      auto s = zero_sample(split[u].train, cfg.max_len);
      if (!s) continue;
      for (int rep = 0; rep <= row[u]; ++rep) out.push_back(*s);
    }
    return out;
  }

  const uint64_t master = cfg.seed;
  if (cfg.policy == "zero" || ablation == AblationKind::beta) {
    for (const auto& sp : split)
      if (auto s = zero_sample(sp.train, cfg.max_len)) out.push_back(*s);
    return out;
  }

  if (cfg.policy == "reppad" || cfg.policy == "reppad_plus") {
    const PadPolicy pol = cfg.pad_policy();
    for (size_t u = 0; u < split.size(); ++u) {
      Rng rng = derive_stream(master, ablation == AblationKind::gamma ? "gamma" : "pad",
                              static_cast<uint64_t>(epoch), static_cast<uint64_t>(u));
      std::optional<PaddedSample> s;
      if (ablation == AblationKind::gamma) {
        if (split[u].train.size() >= 2) s = other_user_sample(pol, split, u, rng);
      } else {
        s = make_training_sample(split[u].train, pol, rng);
      }
      if (!s) continue;
      if (counts_out) (*counts_out)[u] = static_cast<uint16_t>(s->pad_copies);
      out.push_back(std::move(*s));
    }
    return out;
  }

  // baseline operators: the original zero-padded sample plus vertical additions
  if (cfg.augment_op == "slide_window") {
    for (const auto& sp : split)
      for (const auto& w : enumerate_windows(sp.train, cfg.augment_window))
        if (auto s = zero_sample(w, cfg.max_len)) out.push_back(*s);
    return out;
  }

  const bool combined = cfg.augment_op == "cmr" || cfg.augment_op == "cmrsi";
  const AugmentSpec spec = spec_of(cfg);
  for (size_t u = 0; u < split.size(); ++u) {
    const auto& train = split[u].train;
    if (auto s = zero_sample(train, cfg.max_len)) out.push_back(*s);
    if (train.size() < 2) continue;
    Rng rng = derive_stream(master, "aug", static_cast<uint64_t>(epoch),
                            static_cast<uint64_t>(u));
    std::vector<int32_t> aug =
        combined ? apply_cmr(cfg.augment_op == "cmrsi", cfg.augment_ratio, train, vocab,
                             sim, rng)
                 : apply_augment(spec, train, vocab, sim, rng);
    if (auto s = zero_sample(aug, cfg.max_len)) out.push_back(*s);
  }
  return out;
}

int64_t expected_samples(const ExperimentConfig& cfg, const std::vector<SplitSeq>& split) {
  int64_t n = 0;
  if (cfg.policy == "reppad" || cfg.policy == "reppad_plus") {
    for (const auto& sp : split) n += sp.train.size() >= 2 ? 1 : 0;
    return n;
  }
  if (cfg.policy == "augment" && cfg.augment_op == "slide_window") {
    for (const auto& sp : split) {
      const int64_t len = static_cast<int64_t>(sp.train.size());
      if (len < 2) continue;
      n += len <= cfg.augment_window ? 1 : len - cfg.augment_window + 1;
    }
    return n;
  }
  return -1;  // no accounting law for the other strategies
}

}  // namespace harness_detail

// ---------------------------------------------------------------------------
// evaluation inputs
// ---------------------------------------------------------------------------

namespace {

struct EvalInputs {
  std::vector<PaddedSample> valid_in, test_in;
  std::vector<int32_t> valid_tgt, test_tgt;
  std::vector<std::vector<int32_t>> exclude;  // per user, when exclude_seen
};

PaddedSample plain_eval_input(const std::vector<int32_t>& history, int max_len) {
  PaddedSample s;
  s.input = seq_prepare(history, max_len);
  s.target.assign(static_cast<size_t>(max_len), 0);
  s.loss_mask.assign(static_cast<size_t>(max_len), 0);
  s.segment_starts = {0};
  return s;
}

// The beta ablation pushes evaluation histories through repetition padding. Only
// the padded input and its segment starts matter; supervision fields stay off.
PaddedSample padded_eval_input(const std::vector<int32_t>& history, const PadPolicy& pol,
                               Rng& rng) {
  PaddedSample s = pad_and_prepare(history, history, pol, rng);
  std::fill(s.target.begin(), s.target.end(), 0);
  std::fill(s.loss_mask.begin(), s.loss_mask.end(), 0);
  return s;
}

EvalInputs build_eval_inputs(const ExperimentConfig& cfg, const std::vector<SplitSeq>& split,
                             bool beta_padding) {
  EvalInputs e;
  PadPolicy beta_pol = cfg.pad_policy();
  beta_pol.mode = PadMode::reppad_plus;
  for (size_t u = 0; u < split.size(); ++u) {
    const auto& sp = split[u];
    std::vector<int32_t> test_hist = sp.train;
    test_hist.push_back(sp.valid);
    if (beta_padding) {
      Rng rv = derive_stream(cfg.seed, "beta-valid", static_cast<uint64_t>(u));
      Rng rt = derive_stream(cfg.seed, "beta-test", static_cast<uint64_t>(u));
      e.valid_in.push_back(padded_eval_input(sp.train, beta_pol, rv));
      e.test_in.push_back(padded_eval_input(test_hist, beta_pol, rt));
    } else {
      e.valid_in.push_back(plain_eval_input(sp.train, cfg.max_len));
      e.test_in.push_back(plain_eval_input(test_hist, cfg.max_len));
    }
    e.valid_tgt.push_back(sp.valid);
    e.test_tgt.push_back(sp.test);
    if (cfg.eval_exclude_seen) {
      std::vector<int32_t> seen = sp.train;
      seen.push_back(sp.valid);
      seen.push_back(sp.test);
      e.exclude.push_back(std::move(seen));
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// artifact writers
// ---------------------------------------------------------------------------

std::string fmt10(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << content;
  if (!os) throw std::runtime_error("write failed for " + path);
}

nlohmann::ordered_json table_json(const MetricTable& t) {
  nlohmann::ordered_json j;
  j["HR@5"] = t.hr5;
  j["HR@10"] = t.hr10;
  j["HR@20"] = t.hr20;
  j["NDCG@5"] = t.ndcg5;
  j["NDCG@10"] = t.ndcg10;
  j["NDCG@20"] = t.ndcg20;
  return j;
}

std::string render_report(const ExperimentConfig& cfg, const PreparedData& data,
                          const RunResult& r) {
  nlohmann::ordered_json j;
  j["dataset"] = cfg.dataset_name;
  j["backbone"] = to_string(cfg.model.backbone);
  j["policy"] = r.policy_label;
  j["ablation"] = to_string(r.ablation);
  j["seed"] = cfg.seed;
  j["users"] = data.corpus.num_users();
  j["items"] = data.corpus.num_items();
  j["interactions"] = data.corpus.num_interactions();
  j["samples_per_epoch"] = r.samples_per_epoch;
  j["epochs_run"] = r.epochs_run;
  j["best_epoch"] = r.best_epoch;
  j["stop_epoch"] = r.stop_epoch;
  j["monitor"] = cfg.monitor;
  nlohmann::ordered_json conf;
  for (const auto& [k, v] : cfg.to_flat_map())
    if (k != "out_dir") conf[k] = v;  // a location, not an experiment parameter
  j["config"] = std::move(conf);
  j["valid"] = table_json(r.report.valid);
  j["test"] = table_json(r.report.test);
  return j.dump(2) + "\n";
}

struct GradStreamRow {
  int64_t step;
  double mean, mean_abs;
};

void write_run_artifacts(const ExperimentConfig& cfg, const RunResult& r,
                         const std::vector<GradStreamRow>& grads,
                         const std::vector<std::vector<uint16_t>>& counts) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/report.json", r.report_json);

  std::ostringstream log;
  log << "epoch,mean_loss,samples,active_positions,val_" << cfg.monitor << "\n";
  for (const auto& row : r.log)
    log << row.epoch << ',' << fmt10(row.mean_loss) << ',' << row.samples << ','
        << row.active << ',' << fmt10(row.val_metric) << '\n';
  write_text(cfg.out_dir + "/train_log.csv", log.str());

  std::ostringstream timing;
  timing << "epoch,train_seconds\n";
  for (const auto& row : r.log) timing << row.epoch << ',' << fmt10(row.seconds) << '\n';
  timing << "total," << fmt10(r.total_train_seconds) << '\n';
  write_text(cfg.out_dir + "/timing.csv", timing.str());

  std::ostringstream gh;
  gh << "kind,a,b,c\n";
  std::vector<double> stream;
  stream.reserve(grads.size());
  for (const auto& g : grads) {
    gh << "step," << g.step << ',' << fmt10(g.mean) << ',' << fmt10(g.mean_abs) << '\n';
    stream.push_back(g.mean_abs);
  }
  const std::vector<double> edges = default_grad_bucket_edges();
  const std::vector<int64_t> hist = grad_histogram(stream, edges);
  gh << "bucket,0,0," << hist[0] << '\n';
  for (size_t i = 0; i < edges.size(); ++i)
    gh << "bucket," << (i == 0 ? std::string("0") : fmt10(edges[i - 1])) << ','
       << fmt10(edges[i]) << ',' << hist[i + 1] << '\n';
  gh << "bucket," << fmt10(edges.back()) << ",inf," << hist[edges.size() + 1] << '\n';
  write_text(cfg.out_dir + "/grad_hist.csv", gh.str());

  if (!counts.empty()) write_counts_file(cfg.out_dir + "/counts.bin", counts);

  const std::string runs_path = cfg.out_dir + "/runs.csv";
  const bool fresh = !fs::exists(runs_path);
  std::ofstream runs(runs_path, std::ios::binary | std::ios::app);
  if (!runs) throw std::runtime_error("cannot write " + runs_path);
  if (fresh) runs << EvalReport::csv_header();
  runs << r.report.csv_rows(cfg.dataset_name, to_string(cfg.model.backbone),
                            r.policy_label, cfg.seed);
}

// ---------------------------------------------------------------------------
// the training loop
// ---------------------------------------------------------------------------

template <class T>
std::vector<std::vector<T>> snapshot_params(const Model<T>& m) {
  std::vector<std::vector<T>> out;
  out.reserve(m.params.size());
  for (const auto& p : m.params)
    out.emplace_back(p.tensor.data(), p.tensor.data() + p.tensor.numel());
  return out;
}

template <class T>
void restore_params(Model<T>& m, const std::vector<std::vector<T>>& snap) {
  for (size_t i = 0; i < m.params.size(); ++i)
    std::memcpy(m.params[i].tensor.data(), snap[i].data(), snap[i].size() * sizeof(T));
}

template <class T>
RunResult run_impl(const ExperimentConfig& cfg, const PreparedData& data,
                   AblationKind ablation) {
  if (!cfg.seed_set) throw std::invalid_argument("a seed is required for training runs");
#ifdef _OPENMP
  omp_set_num_threads(cfg.threads);
#endif
  const int32_t vocab = static_cast<int32_t>(data.corpus.num_items());
  if (vocab < 1) throw std::invalid_argument("corpus has no items after filtering");

  ItemSimilarity sim;
  const ItemSimilarity* simp = nullptr;
  if (cfg.needs_similarity()) {
    std::vector<std::vector<int32_t>> trains;
    trains.reserve(data.split.size());
    for (const auto& sp : data.split) trains.push_back(sp.train);
    sim = build_similarity(trains, cfg.sim_top_s);
    simp = &sim;
  }

  std::vector<std::vector<uint16_t>> alpha_counts;
  const std::vector<std::vector<uint16_t>>* alpha_ptr = nullptr;
  int max_epochs = cfg.max_epochs;
  if (ablation == AblationKind::alpha) {
    if (cfg.alpha_counts.empty())
      throw std::invalid_argument(
          "alpha ablation requires alpha.counts pointing at a recorded counts.bin");
    alpha_counts = read_counts_file(cfg.alpha_counts);
    if (alpha_counts.empty()) throw std::invalid_argument("recorded counts file has no epochs");
    alpha_ptr = &alpha_counts;
    max_epochs = std::min<int>(max_epochs, static_cast<int>(alpha_counts.size()));
  }

  ModelConfig mc = cfg.model;
  mc.max_len = cfg.max_len;
  Rng init = derive_stream(cfg.seed, "init");
  Model<T> model(mc, vocab, init);
  AdamState<T> opt;
  opt.lr = cfg.lr;

  const EvalInputs monitor_inputs = build_eval_inputs(cfg, data.split, false);
  const EvalInputs* report_inputs = &monitor_inputs;
  EvalInputs beta_inputs;
  if (ablation == AblationKind::beta) {
    beta_inputs = build_eval_inputs(cfg, data.split, true);
    report_inputs = &beta_inputs;
  }
  const auto* excl = cfg.eval_exclude_seen ? &monitor_inputs.exclude : nullptr;

  const bool record_counts = ablation != AblationKind::alpha &&
                             ablation != AblationKind::beta &&
                             (cfg.policy == "reppad" || cfg.policy == "reppad_plus");
  const int64_t expect = ablation == AblationKind::none
                             ? harness_detail::expected_samples(cfg, data.split)
                             : -1;

  RunResult r;
  r.ablation = ablation;
  r.policy_label = ablation == AblationKind::beta ? "zero." + to_string(ablation)
                   : ablation != AblationKind::none
                       ? cfg.policy_label() + "." + to_string(ablation)
                       : cfg.policy_label();

  EarlyStopMonitor stopper(cfg.patience);
  std::vector<std::vector<T>> best;
  std::vector<std::vector<uint16_t>> counts_log;
  std::vector<GradStreamRow> grads;
  int64_t global_step = 0;
  using clock = std::chrono::steady_clock;

  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    try {
      std::vector<uint16_t> epoch_counts;
      std::vector<PaddedSample> samples = harness_detail::build_epoch_samples(
          cfg, data.split, vocab, epoch, simp, ablation,
          alpha_ptr, record_counts ? &epoch_counts : nullptr);
      if (expect >= 0 && static_cast<int64_t>(samples.size()) != expect)
        throw std::logic_error("sequence accounting violated: built " +
                               std::to_string(samples.size()) + " samples, expected " +
                               std::to_string(expect));
      if (record_counts) counts_log.push_back(std::move(epoch_counts));

      std::vector<size_t> order(samples.size());
      std::iota(order.begin(), order.end(), size_t{0});
      Rng shuffle_rng = derive_stream(cfg.seed, "shuffle", static_cast<uint64_t>(epoch));
      shuffle_rng.shuffle(order);

      double loss_sum = 0.0, secs = 0.0;
      int64_t active_sum = 0;
      for (size_t lo = 0, bi = 0; lo < order.size(); lo += static_cast<size_t>(cfg.batch_size), ++bi) {
        const size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.batch_size));
        std::vector<PaddedSample> batch;
        batch.reserve(hi - lo);
        for (size_t i = lo; i < hi; ++i) batch.push_back(samples[order[i]]);
        Rng drop = derive_stream(cfg.seed, "dropout", static_cast<uint64_t>(epoch), bi);
        StepStats stats;
        const auto t0 = clock::now();
        try {
          stats = train_step(model, batch, opt, drop);
        } catch (const std::exception& e) {
          throw std::runtime_error("batch " + std::to_string(bi) + ": " + e.what());
        }
        secs += std::chrono::duration<double>(clock::now() - t0).count();
        if (!stats.skipped) {
          loss_sum += stats.loss * static_cast<double>(stats.active);
          active_sum += stats.active;
          if (model.item_emb.has_grad()) {
            const T* g = model.item_emb.grad();
            const int64_t n = model.item_emb.numel();
            double mean = 0.0, mean_abs = 0.0;
            for (int64_t i = 0; i < n; ++i) {
              mean += static_cast<double>(g[i]);
              mean_abs += std::fabs(static_cast<double>(g[i]));
            }
            grads.push_back({global_step, mean / static_cast<double>(n),
                             mean_abs / static_cast<double>(n)});
          }
        }
        ++global_step;
      }

      std::vector<int64_t> vr = rank_targets(model, monitor_inputs.valid_in,
                                             monitor_inputs.valid_tgt, cfg.eval_batch, excl);
      const double val = metric_of(metrics_from_ranks(vr), cfg.monitor);

      EpochLogRow row;
      row.epoch = epoch;
      row.mean_loss = active_sum > 0 ? loss_sum / static_cast<double>(active_sum) : 0.0;
      row.samples = static_cast<int64_t>(samples.size());
      row.active = active_sum;
      row.val_metric = val;
      row.seconds = secs;
      r.log.push_back(row);
      r.total_train_seconds += secs;
      r.samples_per_epoch = row.samples;
      r.stop_epoch = epoch;

      const bool stop = stopper.observe(val);
      if (stopper.last_improved()) best = snapshot_params(model);
      if (stop) break;
    } catch (const std::exception& e) {
      throw std::runtime_error("epoch " + std::to_string(epoch) + ": " + e.what());
    }
  }

  r.epochs_run = static_cast<int>(r.log.size());
  r.best_epoch = std::max(0, stopper.best_epoch());
  if (!best.empty()) restore_params(model, best);

  const auto* rex = cfg.eval_exclude_seen ? &report_inputs->exclude : nullptr;
  r.report.valid_ranks = rank_targets(model, report_inputs->valid_in,
                                      report_inputs->valid_tgt, cfg.eval_batch, rex);
  r.report.test_ranks = rank_targets(model, report_inputs->test_in, report_inputs->test_tgt,
                                     cfg.eval_batch, rex);
  r.report.valid = metrics_from_ranks(r.report.valid_ranks);
  r.report.test = metrics_from_ranks(r.report.test_ranks);
  r.report_json = render_report(cfg, data, r);

  write_run_artifacts(cfg, r, grads, counts_log);
  save_checkpoint(model, cfg.out_dir + "/model.ckpt");
  return r;
}

}  // namespace

RunResult run_on_prepared(const ExperimentConfig& cfg, const PreparedData& data,
                          AblationKind ablation) {
  cfg.validate();
  if (cfg.precision == "f64") return run_impl<double>(cfg, data, ablation);
  return run_impl<float>(cfg, data, ablation);
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_on_prepared(cfg, prepare_dataset(cfg));
}

// ---------------------------------------------------------------------------
// variant grid
// ---------------------------------------------------------------------------

GridResult run_variant_grid(const ExperimentConfig& base) {
  base.validate();
  if (!base.seed_set) throw std::invalid_argument("a seed is required for the variant grid");
  const PreparedData data = prepare_dataset(base);

  const MRule rules[] = {MRule::fix, MRule::max, MRule::rand_incl_zero, MRule::rand_from_one};
  GridResult g;

  auto run_cell = [&](const std::string& mode, const MRule* rule, bool delim) {
    GridCell cell;
    cell.mode = mode;
    cell.m_rule = rule ? to_string(*rule) : "-";
    cell.delimiter = rule ? (delim ? "on" : "off") : "-";
    ExperimentConfig c = base;
    c.policy = mode;
    if (rule) {
      c.m_rule = *rule;
      c.pad_delimiter = delim;
      c.out_dir = base.out_dir + "/grid/" + mode + "_" + cell.m_rule + "_" + cell.delimiter;
    } else {
      c.out_dir = base.out_dir + "/grid/zero";
    }
    try {
      RunResult r = run_on_prepared(c, data);
      cell.ok = true;
      cell.test = r.report.test;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    g.cells.push_back(std::move(cell));
  };

  run_cell("zero", nullptr, true);
  for (const char* mode : {"reppad", "reppad_plus"})
    for (const MRule& rule : rules)
      for (bool delim : {true, false}) run_cell(mode, &rule, delim);

  // aggregation with relative improvements over the zero baseline (Imp-O) and over
  // the reppad cell with the same m-rule and delimiter (Imp-R)
  auto imp = [](double v, double ref) -> std::string {
    if (ref == 0.0) return "";
    return fmt10(100.0 * (v - ref) / ref);
  };
  const GridCell* zero = &g.cells.front();
  auto reppad_ref = [&](const GridCell& c) -> const GridCell* {
    for (const auto& o : g.cells)
      if (o.mode == "reppad" && o.m_rule == c.m_rule && o.delimiter == c.delimiter && o.ok)
        return &o;
    return nullptr;
  };

  std::ostringstream csv;
  csv << "mode,m_rule,delimiter,seed,test_hr5,test_hr10,test_hr20,test_ndcg5,test_ndcg10,"
         "test_ndcg20,imp_o_hr10,imp_o_ndcg10,imp_r_hr10,imp_r_ndcg10\n";
  for (const auto& c : g.cells) {
    if (!c.ok) continue;
    csv << c.mode << ',' << c.m_rule << ',' << c.delimiter << ',' << base.seed << ','
        << fmt10(c.test.hr5) << ',' << fmt10(c.test.hr10) << ',' << fmt10(c.test.hr20) << ','
        << fmt10(c.test.ndcg5) << ',' << fmt10(c.test.ndcg10) << ',' << fmt10(c.test.ndcg20);
    if (&c == zero) {
      csv << ",0,0,,";  // Imp-O of the baseline row is 0 by construction
    } else {
      csv << ',' << (zero->ok ? imp(c.test.hr10, zero->test.hr10) : "") << ','
          << (zero->ok ? imp(c.test.ndcg10, zero->test.ndcg10) : "");
      const GridCell* ref = c.mode == "reppad" ? &c : reppad_ref(c);
      csv << ',' << (ref ? imp(c.test.hr10, ref->test.hr10) : "") << ','
          << (ref ? imp(c.test.ndcg10, ref->test.ndcg10) : "");
    }
    csv << '\n';
  }
  g.csv = csv.str();

  std::filesystem::create_directories(base.out_dir);
  write_text(base.out_dir + "/grid.csv", g.csv);
  std::ostringstream fails;
  for (const auto& c : g.cells)
    if (!c.ok)
      fails << c.mode << ' ' << c.m_rule << ' ' << c.delimiter << ": " << c.error << '\n';
  if (!fails.str().empty()) write_text(base.out_dir + "/grid_failures.txt", fails.str());
  return g;
}

// ---------------------------------------------------------------------------
// ablations and checkpoint evaluation
// ---------------------------------------------------------------------------

RunResult run_ablation(const ExperimentConfig& cfg, AblationKind kind) {
  ExperimentConfig c = cfg;
  switch (kind) {
    case AblationKind::none:
      break;
    case AblationKind::alpha:
      c.policy = "zero";
      break;
    case AblationKind::beta:
      c.policy = "zero";
      break;
    case AblationKind::gamma:
      if (c.policy != "reppad" && c.policy != "reppad_plus") c.policy = "reppad_plus";
      break;
    case AblationKind::leakage:
      c.model.leakage_mask = true;
      if (c.policy != "reppad" && c.policy != "reppad_plus") c.policy = "reppad_plus";
      break;
  }
  c.validate();
  return run_on_prepared(c, prepare_dataset(c), kind);
}

RunResult evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& ckpt_path) {
  const PreparedData data = prepare_dataset(cfg);
  RunResult r;
  r.policy_label = cfg.policy_label() + ".eval";

  auto eval_with = [&](auto&& model) {
    if (model.vocab != static_cast<int32_t>(data.corpus.num_items()))
      throw std::runtime_error("checkpoint was trained on " + std::to_string(model.vocab) +
                               " items, corpus has " +
                               std::to_string(data.corpus.num_items()));
    ExperimentConfig ec = cfg;
    ec.max_len = model.cfg.max_len;
    ec.model = model.cfg;
    const EvalInputs inputs = build_eval_inputs(ec, data.split, false);
    const auto* excl = ec.eval_exclude_seen ? &inputs.exclude : nullptr;
    r.report.valid_ranks =
        rank_targets(model, inputs.valid_in, inputs.valid_tgt, ec.eval_batch, excl);
    r.report.test_ranks =
        rank_targets(model, inputs.test_in, inputs.test_tgt, ec.eval_batch, excl);
    r.report.valid = metrics_from_ranks(r.report.valid_ranks);
    r.report.test = metrics_from_ranks(r.report.test_ranks);
    ec.dataset_name = cfg.dataset_name;
    r.report_json = render_report(ec, data, r);
  };
  if (cfg.precision == "f64") {
    Model<double> m = load_checkpoint<double>(ckpt_path);
    eval_with(m);
  } else {
    Model<float> m = load_checkpoint<float>(ckpt_path);
    eval_with(m);
  }

  std::filesystem::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/report.json", r.report_json);
  const std::string runs_path = cfg.out_dir + "/runs.csv";
  const bool fresh = !std::filesystem::exists(runs_path);
  std::ofstream runs(runs_path, std::ios::binary | std::ios::app);
  if (fresh) runs << EvalReport::csv_header();
  runs << r.report.csv_rows(cfg.dataset_name, to_string(cfg.model.backbone), r.policy_label,
                            cfg.seed);
  return r;
}

}  // namespace reppad
