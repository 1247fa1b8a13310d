// Experiment harness: dataset preparation, training runs with deterministic
// artifacts, the variant grid, ablations, and the synthetic-corpus generator.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "reppad/config.hpp"
#include "reppad/harness.hpp"
#include "reppad/synth.hpp"

using namespace reppad;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(bool(is));
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("reppad_harness_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

// A small grouped-Markov corpus written to disk once per fixture tag.
std::string synth_tsv(const TempDir& dir, uint64_t seed) {
  SynthConfig sc;
  sc.num_users = 80;
  sc.num_items = 40;
  sc.num_groups = 4;
  sc.branch = 3;
  sc.min_len = 6;
  sc.mean_extra = 3.0;
  sc.max_len = 15;
  sc.seed = seed;
  const std::string path = (dir.path / "synth.tsv").string();
  write_interactions_tsv(generate_synth(sc).records, path);
  return path;
}

ExperimentConfig tiny_config(const std::string& tsv, const std::string& out) {
  ExperimentConfig cfg;
  cfg.dataset = tsv;
  cfg.dataset_name = "tinysynth";
  cfg.kcore = 3;
  cfg.max_len = 12;
  cfg.model.backbone = Backbone::gru;
  cfg.model.embed_dim = 8;
  cfg.model.hidden_dim = 8;
  cfg.model.dropout = 0.1;
  cfg.policy = "reppad_plus";
  cfg.m_rule = MRule::rand_from_one;
  cfg.pad_delimiter = true;
  cfg.batch_size = 16;
  cfg.max_epochs = 2;
  cfg.patience = 5;
  cfg.lr = 0.01;
  cfg.monitor = "ndcg10";
  cfg.seed = 7;
  cfg.seed_set = true;
  cfg.out_dir = out;
  cfg.eval_batch = 32;
  return cfg;
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

TEST_CASE("synthetic corpus: determinism, structure, and k-core survivability") {
  SynthConfig sc;
  sc.num_users = 200;
  sc.num_items = 60;
  sc.num_groups = 5;
  sc.seed = 42;
  SynthResult a = generate_synth(sc);
  SynthResult b = generate_synth(sc);
  REQUIRE(a.records.size() == b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].user == b.records[i].user);
    CHECK(a.records[i].item == b.records[i].item);
    CHECK(a.records[i].ts == b.records[i].ts);
  }
  sc.seed = 43;
  SynthResult c = generate_synth(sc);
  bool same = a.records.size() == c.records.size();
  if (same)
    for (size_t i = 0; i < a.records.size() && same; ++i)
      same = a.records[i].item == c.records[i].item;
  CHECK_FALSE(same);

  // every preferred successor of an item stays within its group
  int checked = 0;
  for (int32_t it = 1; it <= sc.num_items; ++it) {
    REQUIRE(!a.preferred[static_cast<size_t>(it)].empty());
    for (int32_t nxt : a.preferred[static_cast<size_t>(it)]) {
      CHECK(a.item_group[static_cast<size_t>(nxt)] == a.item_group[static_cast<size_t>(it)]);
      ++checked;
    }
  }
  CHECK(checked >= sc.num_items);

  // enough interactions survive a 5-core to train on
  std::vector<Interaction> kept = k_core_filter(a.records, 5);
  CHECK(kept.size() >= a.records.size() / 2);
  Corpus corpus = build_corpus(kept);
  CHECK(corpus.num_users() >= 50);
  CHECK(corpus.num_items() >= 20);
  for (const auto& seq : corpus.sequences) CHECK(seq.size() >= 5);

  // TSV round trip through the loader
  TempDir dir("synth_io");
  const std::string path = (dir.path / "s.tsv").string();
  write_interactions_tsv(a.records, path);
  LoadResult loaded = load_interactions(path, LoadOptions{});
  CHECK(loaded.records.size() == a.records.size());
  CHECK(loaded.malformed_lines.empty());

  nlohmann::json meta = nlohmann::json::parse(transitions_json(sc, a));
  CHECK(meta["num_items"] == sc.num_items);
  CHECK(meta["preferred"].size() == static_cast<size_t>(sc.num_items) + 1);
}

TEST_CASE("config: key=value text, JSON, overrides, validation") {
  const std::string text =
      "# comment line\n"
      "dataset = data/x.tsv\n"
      "backbone = sa\n"
      "policy = reppad\n"
      "pad.m_rule = fix\n"
      "pad.fix_k = 2\n"
      "pad.delimiter = off\n"
      "max_len = 30\n"
      "lr = 0.005\n";
  auto kv = parse_config_text(text);
  ExperimentConfig cfg = config_from_map(kv);
  CHECK(cfg.dataset == "data/x.tsv");
  CHECK(cfg.dataset_name == "x");
  CHECK(cfg.model.backbone == Backbone::self_attention);
  CHECK(cfg.policy == "reppad");
  CHECK(cfg.m_rule == MRule::fix);
  CHECK(cfg.fix_k == 2);
  CHECK_FALSE(cfg.pad_delimiter);
  CHECK(cfg.max_len == 30);
  CHECK(cfg.model.max_len == 30);
  CHECK(cfg.lr == doctest::Approx(0.005));

  // same config as nested JSON
  const std::string js = R"({"dataset":"data/x.tsv","backbone":"sa","policy":"reppad",
    "pad":{"m_rule":"fix","fix_k":2,"delimiter":false},"max_len":30,"lr":0.005})";
  auto kv2 = parse_config_text(js);
  CHECK(config_from_map(kv2).to_flat_map() == cfg.to_flat_map());

  apply_override(kv, "policy=zero");
  apply_override(kv, "seed=99");
  ExperimentConfig cfg2 = config_from_map(kv);
  CHECK(cfg2.policy == "zero");
  CHECK(cfg2.seed == 99);
  CHECK(cfg2.seed_set);

  CHECK_THROWS(config_from_map({{"no_such_key", "1"}}));
  CHECK_THROWS(config_from_map({{"max_len", "abc"}}));
  CHECK_THROWS(config_from_map({{"max_len", "1"}}));       // below minimum
  CHECK_THROWS(config_from_map({{"policy", "mystery"}}));
  CHECK_THROWS(config_from_map({{"dropout", "1.5"}}));
  CHECK_THROWS(apply_override(kv, "not-an-assignment"));

  // defaults
  ExperimentConfig d = config_from_map({});
  CHECK(d.policy == "zero");
  CHECK(d.max_len == 50);
  CHECK(d.batch_size == 256);
  CHECK(d.max_epochs == 200);
  CHECK(d.patience == 20);
  CHECK_FALSE(d.seed_set);

  // to_flat_map round-trips through config_from_map
  auto flat = cfg.to_flat_map();
  ExperimentConfig back = config_from_map(flat);
  CHECK(back.to_flat_map() == flat);
}

TEST_CASE("counts file round trip and error paths") {
  TempDir dir("counts");
  const std::string p = (dir.path / "c.bin").string();
  std::vector<std::vector<uint16_t>> counts = {{0, 3, 1}, {2, 2, 0}};
  write_counts_file(p, counts);
  CHECK(read_counts_file(p) == counts);

  std::ofstream(p, std::ios::binary) << "nota";
  CHECK_THROWS(read_counts_file(p));
  CHECK_THROWS(read_counts_file((dir.path / "missing.bin").string()));
  CHECK_THROWS(write_counts_file(p, {{1, 2}, {3}}));
}

TEST_CASE("ablation names and monitor metrics") {
  for (const char* s : {"none", "alpha", "beta", "gamma", "leakage"})
    CHECK(to_string(ablation_from_string(s)) == s);
  CHECK_THROWS(ablation_from_string("delta"));
  MetricTable t{0.1, 0.2, 0.3, 0.04, 0.05, 0.06};
  CHECK(metric_of(t, "hr5") == doctest::Approx(0.1));
  CHECK(metric_of(t, "ndcg20") == doctest::Approx(0.06));
  CHECK_THROWS(metric_of(t, "auc"));
}

TEST_CASE("sample accounting: repetition modes yield one sample per user, windows enumerate") {
  std::vector<SplitSeq> split;
  split.push_back({{1, 2, 3, 4, 5, 6}, 7, 8});
  split.push_back({{2, 3}, 4, 5});
  split.push_back({{9}, 1, 2});  // too short to form a training pair

  ExperimentConfig cfg;
  cfg.policy = "reppad";
  cfg.max_len = 10;
  cfg.seed = 3;
  cfg.seed_set = true;
  auto samples = harness_detail::build_epoch_samples(cfg, split, 9, 0, nullptr,
                                                     AblationKind::none, nullptr, nullptr);
  CHECK(static_cast<int64_t>(samples.size()) == harness_detail::expected_samples(cfg, split));
  CHECK(samples.size() == 2);

  cfg.policy = "augment";
  cfg.augment_op = "slide_window";
  cfg.augment_window = 3;
  samples = harness_detail::build_epoch_samples(cfg, split, 9, 0, nullptr, AblationKind::none,
                                                nullptr, nullptr);
  // user 0: 6-3+1 = 4 windows, user 1: one short window, user 2: skipped
  CHECK(harness_detail::expected_samples(cfg, split) == 5);
  CHECK(samples.size() == 5);

  // vertical baselines add original + augmented per eligible user; user 1's
  // 2-item sequence crops down to a single item, which forms no training pair
  cfg.augment_op = "crop";
  samples = harness_detail::build_epoch_samples(cfg, split, 0, 0, nullptr, AblationKind::none,
                                                nullptr, nullptr);
  CHECK(samples.size() == 3);
}

TEST_CASE("gamma padding draws content from other users; single user falls back to self") {
  std::vector<SplitSeq> split;
  split.push_back({{1, 2, 3}, 4, 5});
  split.push_back({{6, 7, 8}, 9, 1});
  ExperimentConfig cfg;
  cfg.policy = "reppad";
  cfg.m_rule = MRule::max;
  cfg.max_len = 12;
  cfg.seed = 5;
  cfg.seed_set = true;

  auto samples = harness_detail::build_epoch_samples(cfg, split, 9, 0, nullptr,
                                                     AblationKind::gamma, nullptr, nullptr);
  REQUIRE(samples.size() == 2);
  // user 0's own suffix is intact, and the padded prefix is built from user 1's items
  const auto& in0 = samples[0].input;
  std::vector<int32_t> suffix(in0.end() - 2, in0.end());
  CHECK(suffix == std::vector<int32_t>{1, 2});
  bool saw_other = false;
  for (size_t i = 0; i + 2 < in0.size(); ++i)
    if (in0[i] >= 6 && in0[i] <= 8) saw_other = true;
  CHECK(saw_other);
  CHECK(samples[0].pad_copies > 0);

  std::vector<SplitSeq> lone = {split[0]};
  samples = harness_detail::build_epoch_samples(cfg, lone, 9, 0, nullptr, AblationKind::gamma,
                                                nullptr, nullptr);
  REQUIRE(samples.size() == 1);
  for (int32_t v : samples[0].input) CHECK((v == 0 || (v >= 1 && v <= 3)));
  CHECK(samples[0].pad_copies > 0);
}

TEST_CASE("training run: artifacts, determinism, checkpoint evaluation") {
  TempDir dir("run");
  const std::string tsv = synth_tsv(dir, 17);
  ExperimentConfig cfg = tiny_config(tsv, (dir.path / "a").string());

  PreparedData data = prepare_dataset(cfg);
  CHECK(data.corpus.num_users() >= 20);
  RunResult r = run_on_prepared(cfg, data);

  CHECK(r.epochs_run == 2);
  CHECK(r.log.size() == 2);
  CHECK(r.samples_per_epoch == data.corpus.num_users());
  CHECK(r.policy_label == "reppad_plus");
  for (const auto& row : r.log) {
    CHECK(row.mean_loss > 0.0);
    CHECK(in_unit(row.val_metric));
    CHECK(row.seconds >= 0.0);
  }
  CHECK(in_unit(r.report.test.hr10));
  CHECK(r.report.valid_ranks.size() == static_cast<size_t>(data.corpus.num_users()));

  // artifact files
  for (const char* f : {"report.json", "train_log.csv", "timing.csv", "grad_hist.csv",
                        "counts.bin", "model.ckpt", "runs.csv"})
    CHECK(fs::exists(dir.path / "a" / f));
  nlohmann::json rep = nlohmann::json::parse(slurp((dir.path / "a" / "report.json").string()));
  CHECK(rep["dataset"] == "tinysynth");
  CHECK(rep["backbone"] == "gru");
  CHECK(rep["policy"] == "reppad_plus");
  CHECK(rep["ablation"] == "none");
  CHECK(rep["epochs_run"] == 2);
  CHECK(rep["test"]["HR@10"].get<double>() == doctest::Approx(r.report.test.hr10));
  CHECK(rep["config"]["pad.m_rule"] == "rand_from_one");
  CHECK_FALSE(rep["config"].contains("out_dir"));

  const std::string log = slurp((dir.path / "a" / "train_log.csv").string());
  CHECK(count_lines(log) == 3);
  CHECK(log.rfind("epoch,mean_loss,samples,active_positions,val_ndcg10\n", 0) == 0);
  const std::string runs = slurp((dir.path / "a" / "runs.csv").string());
  CHECK(count_lines(runs) == 13);
  CHECK(runs.rfind(EvalReport::csv_header(), 0) == 0);

  const std::string gh = slurp((dir.path / "a" / "grad_hist.csv").string());
  CHECK(gh.find("step,0,") != std::string::npos);
  CHECK(gh.find("bucket,0,0,") != std::string::npos);
  CHECK(gh.find(",inf,") != std::string::npos);

  // recorded counts cover every epoch and user
  auto counts = read_counts_file((dir.path / "a" / "counts.bin").string());
  REQUIRE(counts.size() == 2);
  CHECK(counts[0].size() == static_cast<size_t>(data.corpus.num_users()));

  // byte-identical rerun into a different directory
  ExperimentConfig cfg2 = cfg;
  cfg2.out_dir = (dir.path / "b").string();
  run_on_prepared(cfg2, data);
  for (const char* f : {"report.json", "train_log.csv", "grad_hist.csv"})
    CHECK(slurp((dir.path / "a" / f).string()) == slurp((dir.path / "b" / f).string()));

  // a different seed changes the report
  ExperimentConfig cfg3 = cfg;
  cfg3.seed = 8;
  cfg3.out_dir = (dir.path / "c").string();
  RunResult r3 = run_on_prepared(cfg3, data);
  CHECK(r3.report_json != r.report_json);

  // checkpoint evaluation reproduces the reported tables
  ExperimentConfig ecfg = cfg;
  ecfg.out_dir = (dir.path / "e").string();
  RunResult ev = evaluate_checkpoint(ecfg, (dir.path / "a" / "model.ckpt").string());
  CHECK(ev.report.test.hr10 == doctest::Approx(r.report.test.hr10));
  CHECK(ev.report.valid.ndcg10 == doctest::Approx(r.report.valid.ndcg10));
  CHECK(ev.report.test_ranks == r.report.test_ranks);

  // run_experiment = prepare + run
  ExperimentConfig full = cfg;
  full.out_dir = (dir.path / "f").string();
  RunResult rf = run_experiment(full);
  CHECK(rf.report_json == r.report_json);

  // seed is mandatory
  ExperimentConfig noseed = cfg;
  noseed.seed_set = false;
  CHECK_THROWS(run_on_prepared(noseed, data));
}

TEST_CASE("early stopping halts a stalled run") {
  TempDir dir("stall");
  const std::string tsv = synth_tsv(dir, 23);
  ExperimentConfig cfg = tiny_config(tsv, (dir.path / "s").string());
  cfg.policy = "zero";
  cfg.max_epochs = 50;
  cfg.patience = 2;
  cfg.lr = 1e-30;  // updates vanish in f32: the validation metric never improves again
  PreparedData data = prepare_dataset(cfg);
  RunResult r = run_on_prepared(cfg, data);
  CHECK(r.epochs_run == 3);  // epoch 0 improves over -inf, then patience runs out
  CHECK(r.best_epoch == 0);
  CHECK(r.stop_epoch == 2);
}

TEST_CASE("beta ablation: training identical to the zero run, padded evaluation inputs") {
  TempDir dir("beta");
  const std::string tsv = synth_tsv(dir, 31);
  ExperimentConfig zero = tiny_config(tsv, (dir.path / "z").string());
  zero.policy = "zero";
  PreparedData data = prepare_dataset(zero);
  RunResult rz = run_on_prepared(zero, data);

  ExperimentConfig beta = tiny_config(tsv, (dir.path / "bb").string());
  beta.policy = "reppad_plus";  // run_ablation forces zero-policy training
  RunResult rb = run_ablation(beta, AblationKind::beta);

  CHECK(rb.policy_label == "zero.beta");
  CHECK(slurp((dir.path / "z" / "train_log.csv").string()) ==
        slurp((dir.path / "bb" / "train_log.csv").string()));
  CHECK(slurp((dir.path / "z" / "grad_hist.csv").string()) ==
        slurp((dir.path / "bb" / "grad_hist.csv").string()));
  // evaluation inputs differ, so ranks may differ; the report must reflect beta
  nlohmann::json rep = nlohmann::json::parse(slurp((dir.path / "bb" / "report.json").string()));
  CHECK(rep["ablation"] == "beta");
  CHECK_FALSE(fs::exists(dir.path / "bb" / "counts.bin"));
  CHECK(rz.epochs_run == rb.epochs_run);
}

TEST_CASE("alpha ablation replays recorded repetition counts") {
  TempDir dir("alpha");
  const std::string tsv = synth_tsv(dir, 37);
  ExperimentConfig rep = tiny_config(tsv, (dir.path / "r").string());
  rep.policy = "reppad";
  rep.m_rule = MRule::rand_from_one;
  PreparedData data = prepare_dataset(rep);
  run_on_prepared(rep, data);
  const std::string counts_path = (dir.path / "r" / "counts.bin").string();
  REQUIRE(fs::exists(counts_path));
  auto counts = read_counts_file(counts_path);

  ExperimentConfig al = tiny_config(tsv, (dir.path / "al").string());
  al.max_epochs = 10;  // clamped to the recorded epochs
  al.alpha_counts = counts_path;
  RunResult ra = run_ablation(al, AblationKind::alpha);
  CHECK(ra.epochs_run == static_cast<int>(counts.size()));
  CHECK(ra.policy_label == "zero.alpha");
  int64_t expect = 0;
  const auto& last = counts.back();
  for (size_t u = 0; u < last.size(); ++u)
    if (data.split[u].train.size() >= 2) expect += last[u] + 1;
  CHECK(ra.samples_per_epoch == expect);
  CHECK(expect > static_cast<int64_t>(data.split.size()));  // some repetition was recorded

  ExperimentConfig missing = tiny_config(tsv, (dir.path / "m").string());
  CHECK_THROWS_WITH_AS(static_cast<void>(run_ablation(missing, AblationKind::alpha)),
                       doctest::Contains("alpha"), std::invalid_argument);
}

TEST_CASE("gamma and leakage ablation runs complete with the right configuration") {
  TempDir dir("gl");
  const std::string tsv = synth_tsv(dir, 41);
  ExperimentConfig g = tiny_config(tsv, (dir.path / "g").string());
  RunResult rg = run_ablation(g, AblationKind::gamma);
  CHECK(rg.policy_label == "reppad_plus.gamma");
  CHECK(in_unit(rg.report.test.hr10));
  CHECK(fs::exists(dir.path / "g" / "counts.bin"));

  ExperimentConfig l = tiny_config(tsv, (dir.path / "l").string());
  l.model.backbone = Backbone::self_attention;
  l.model.num_blocks = 1;
  RunResult rl = run_ablation(l, AblationKind::leakage);
  CHECK(rl.policy_label == "reppad_plus.leakage");
  nlohmann::json rep = nlohmann::json::parse(slurp((dir.path / "l" / "report.json").string()));
  CHECK(rep["config"]["leakage_mask"] == "true");

  // leakage masking requires self-attention
  ExperimentConfig bad = tiny_config(tsv, (dir.path / "bad").string());
  CHECK_THROWS(static_cast<void>(run_ablation(bad, AblationKind::leakage)));
}

TEST_CASE("variant grid covers 17 cells with recomputable improvement columns") {
  TempDir dir("grid");
  const std::string tsv = synth_tsv(dir, 47);
  ExperimentConfig cfg = tiny_config(tsv, (dir.path / "gr").string());
  cfg.max_epochs = 1;
  cfg.patience = 1;

  GridResult g = run_variant_grid(cfg);
  REQUIRE(g.cells.size() == 17);
  CHECK(g.cells.front().mode == "zero");
  int ok = 0;
  std::set<std::string> labels;
  for (const auto& c : g.cells) {
    if (c.ok) ++ok;
    labels.insert(c.mode + "|" + c.m_rule + "|" + c.delimiter);
  }
  CHECK(ok == 17);
  CHECK(labels.size() == 17);
  CHECK_FALSE(fs::exists(dir.path / "gr" / "grid_failures.txt"));
  CHECK(fs::exists(dir.path / "gr" / "grid.csv"));
  CHECK(count_lines(g.csv) == 18);

  // recompute one improvement column from the raw metric columns
  std::istringstream lines(g.csv);
  std::string line;
  std::getline(lines, line);  // header
  double zero_hr10 = -1.0;
  bool checked_imp = false;
  while (std::getline(lines, line)) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    REQUIRE(f.size() >= 13);
    const double hr10 = std::stod(f[5]);
    if (f[0] == "zero") {
      zero_hr10 = hr10;
      CHECK(f[10] == "0");
      CHECK(f[12] == "");
    } else if (zero_hr10 > 0.0 && !f[10].empty()) {
      CHECK(std::stod(f[10]) ==
            doctest::Approx(100.0 * (hr10 - zero_hr10) / zero_hr10).epsilon(1e-6));
      checked_imp = true;
    }
    if (f[0] == "reppad" && !f[12].empty()) CHECK(std::stod(f[12]) == doctest::Approx(0.0));
  }
  CHECK(checked_imp);

  // per-cell directories hold full run artifacts
  CHECK(fs::exists(dir.path / "gr" / "grid" / "zero" / "report.json"));
  CHECK(fs::exists(dir.path / "gr" / "grid" / "reppad_plus_max_on" / "report.json"));
}
