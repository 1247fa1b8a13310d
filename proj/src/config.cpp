#include "reppad/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace reppad {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> k = {
      "dataset",        "dataset_name",    "user_col",
      "item_col",       "time_col",        "kcore",
      "malformed_threshold", "max_len",
      "backbone",       "embed_dim",       "hidden_dim",
      "num_blocks",     "num_heads",       "dropout",
      "leakage_mask",   "policy",          "pad.m_rule",
      "pad.fix_k",      "pad.delimiter",   "augment.op",
      "augment.ratio",  "augment.window",  "augment.count",
      "augment.sim_top_s", "batch_size",   "max_epochs",
      "patience",       "lr",              "precision",
      "monitor",        "seed",            "out_dir",
      "threads",        "eval.exclude_seen", "eval.batch",
      "alpha.counts"};
  return k;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& want) {
  throw std::invalid_argument("config: key '" + key + "' has value '" + value +
                              "' (expected " + want + ")");
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    bad_value(key, v, "an integer");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    bad_value(key, v, "a non-negative integer");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    bad_value(key, v, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

void flatten_json(const nlohmann::json& j, const std::string& prefix,
                  std::map<std::string, std::string>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      flatten_json(v, prefix.empty() ? k : prefix + "." + k, out);
    return;
  }
  if (prefix.empty())
    throw std::invalid_argument("config: JSON root must be an object");
  if (j.is_string()) out[prefix] = j.get<std::string>();
  else if (j.is_boolean()) out[prefix] = j.get<bool>() ? "true" : "false";
  else if (j.is_number() || j.is_null()) out[prefix] = j.is_null() ? "" : j.dump();
  else throw std::invalid_argument("config: key '" + prefix + "' holds a non-scalar value");
}

std::string file_stem(const std::string& path) {
  size_t slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  size_t dot = base.find_last_of('.');
  return dot == std::string::npos || dot == 0 ? base : base.substr(0, dot);
}

bool is_known_augment_op(const std::string& s) {
  if (s == "cmr" || s == "cmrsi") return true;
  try {
    augment_op_from_string(s);
    return true;
  } catch (...) {
    return false;
  }
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (max_len < 2) throw std::invalid_argument("config: max_len must be >= 2");
  if (kcore < 1) throw std::invalid_argument("config: kcore must be >= 1");
  if (!(malformed_threshold >= 0.0 && malformed_threshold <= 1.0))
    throw std::invalid_argument("config: malformed_threshold must be in [0, 1]");
  if (user_col < 0 || item_col < 0 || time_col < 0)
    throw std::invalid_argument("config: column indices must be >= 0");
  if (policy != "zero" && policy != "reppad" && policy != "reppad_plus" &&
      policy != "augment")
    throw std::invalid_argument("config: policy must be zero|reppad|reppad_plus|augment, got '" +
                                policy + "'");
  if (policy == "augment") {
    if (augment_op.empty())
      throw std::invalid_argument("config: policy 'augment' requires augment.op");
    if (!is_known_augment_op(augment_op))
      throw std::invalid_argument("config: unknown augment.op '" + augment_op + "'");
    if (augment_op == "slide_window" && augment_window < 2)
      throw std::invalid_argument(
          "config: slide_window needs augment.window >= 2 (one-item windows cannot train)");
    if (augment_op != "slide_window" && augment_op != "random_items" &&
        augment_op != "random_seq_items" && !(augment_ratio > 0.0 && augment_ratio <= 1.0))
      throw std::invalid_argument("config: augment.ratio must be in (0, 1]");
    if (augment_count < 1) throw std::invalid_argument("config: augment.count must be >= 1");
    if (sim_top_s < 1) throw std::invalid_argument("config: augment.sim_top_s must be >= 1");
  }
  if (fix_k < 0) throw std::invalid_argument("config: pad.fix_k must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (eval_batch < 1) throw std::invalid_argument("config: eval.batch must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("config: max_epochs must be >= 1");
  if (patience < 1) throw std::invalid_argument("config: patience must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (precision != "f32" && precision != "f64")
    throw std::invalid_argument("config: precision must be f32 or f64");
  static const std::set<std::string> monitors = {"hr5",   "hr10",   "hr20",
                                                 "ndcg5", "ndcg10", "ndcg20"};
  if (!monitors.count(monitor))
    throw std::invalid_argument("config: monitor must be one of hr5|hr10|hr20|ndcg5|ndcg10|ndcg20");
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  ModelConfig mc = model;
  mc.max_len = max_len;
  mc.validate();
}

PadPolicy ExperimentConfig::pad_policy() const {
  PadPolicy p;
  p.mode = policy == "reppad"        ? PadMode::reppad
           : policy == "reppad_plus" ? PadMode::reppad_plus
                                     : PadMode::zero;
  p.m_rule = m_rule;
  p.fix_k = fix_k;
  p.delimiter = pad_delimiter;
  p.max_len = max_len;
  return p;
}

std::string ExperimentConfig::policy_label() const {
  return policy == "augment" ? augment_op : policy;
}

bool ExperimentConfig::needs_similarity() const {
  return policy == "augment" &&
         (augment_op == "substitute" || augment_op == "insert" || augment_op == "cmrsi");
}

std::map<std::string, std::string> ExperimentConfig::to_flat_map() const {
  std::map<std::string, std::string> m;
  m["dataset"] = dataset;
  m["dataset_name"] = dataset_name;
  m["user_col"] = std::to_string(user_col);
  m["item_col"] = std::to_string(item_col);
  m["time_col"] = std::to_string(time_col);
  m["kcore"] = std::to_string(kcore);
  m["malformed_threshold"] = fmt_double(malformed_threshold);
  m["max_len"] = std::to_string(max_len);
  m["backbone"] = to_string(model.backbone);
  m["embed_dim"] = std::to_string(model.embed_dim);
  m["hidden_dim"] = std::to_string(model.hidden_dim);
  m["num_blocks"] = std::to_string(model.num_blocks);
  m["num_heads"] = std::to_string(model.num_heads);
  m["dropout"] = fmt_double(model.dropout);
  m["leakage_mask"] = model.leakage_mask ? "true" : "false";
  m["policy"] = policy;
  m["pad.m_rule"] = to_string(m_rule);
  m["pad.fix_k"] = std::to_string(fix_k);
  m["pad.delimiter"] = pad_delimiter ? "true" : "false";
  m["augment.op"] = augment_op;
  m["augment.ratio"] = fmt_double(augment_ratio);
  m["augment.window"] = std::to_string(augment_window);
  m["augment.count"] = std::to_string(augment_count);
  m["augment.sim_top_s"] = std::to_string(sim_top_s);
  m["batch_size"] = std::to_string(batch_size);
  m["max_epochs"] = std::to_string(max_epochs);
  m["patience"] = std::to_string(patience);
  m["lr"] = fmt_double(lr);
  m["precision"] = precision;
  m["monitor"] = monitor;
  m["seed"] = seed_set ? std::to_string(seed) : "";
  m["out_dir"] = out_dir;
  m["threads"] = std::to_string(threads);
  m["eval.exclude_seen"] = eval_exclude_seen ? "true" : "false";
  m["eval.batch"] = std::to_string(eval_batch);
  m["alpha.counts"] = alpha_counts;
  return m;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
      throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    flatten_json(j, "", out);
    return out;
  }
  std::istringstream is(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not key=value: '" + t + "'");
    std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw std::invalid_argument("config: line " + std::to_string(line_no) + " has an empty key");
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> load_config_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("config: cannot read " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(std::map<std::string, std::string>& m, const std::string& kv) {
  size_t eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override must be key=value, got '" + kv + "'");
  m[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
}

ExperimentConfig config_from_map(const std::map<std::string, std::string>& m) {
  for (const auto& [k, v] : m)
    if (!known_keys().count(k))
      throw std::invalid_argument("config: unknown key '" + k + "'");

  ExperimentConfig c;
  auto get = [&](const char* key) -> const std::string* {
    auto it = m.find(key);
    return it == m.end() || it->second.empty() ? nullptr : &it->second;
  };
  if (auto* v = get("dataset")) c.dataset = *v;
  if (auto* v = get("dataset_name")) c.dataset_name = *v;
  if (auto* v = get("user_col")) c.user_col = static_cast<int>(parse_int("user_col", *v));
  if (auto* v = get("item_col")) c.item_col = static_cast<int>(parse_int("item_col", *v));
  if (auto* v = get("time_col")) c.time_col = static_cast<int>(parse_int("time_col", *v));
  if (auto* v = get("kcore")) c.kcore = static_cast<int>(parse_int("kcore", *v));
  if (auto* v = get("malformed_threshold"))
    c.malformed_threshold = parse_double("malformed_threshold", *v);
  if (auto* v = get("max_len")) c.max_len = static_cast<int>(parse_int("max_len", *v));
  if (auto* v = get("backbone")) {
    try {
      c.model.backbone = backbone_from_string(*v);
    } catch (...) {
      bad_value("backbone", *v, "gru or self_attention");
    }
  }
  if (auto* v = get("embed_dim")) c.model.embed_dim = static_cast<int>(parse_int("embed_dim", *v));
  if (auto* v = get("hidden_dim"))
    c.model.hidden_dim = static_cast<int>(parse_int("hidden_dim", *v));
  if (auto* v = get("num_blocks"))
    c.model.num_blocks = static_cast<int>(parse_int("num_blocks", *v));
  if (auto* v = get("num_heads")) c.model.num_heads = static_cast<int>(parse_int("num_heads", *v));
  if (auto* v = get("dropout")) c.model.dropout = parse_double("dropout", *v);
  if (auto* v = get("leakage_mask")) c.model.leakage_mask = parse_bool("leakage_mask", *v);
  if (auto* v = get("policy")) c.policy = *v;
  if (auto* v = get("pad.m_rule")) {
    try {
      c.m_rule = m_rule_from_string(*v);
    } catch (...) {
      bad_value("pad.m_rule", *v, "fix|max|rand_incl_zero|rand_from_one");
    }
  }
  if (auto* v = get("pad.fix_k")) c.fix_k = static_cast<int>(parse_int("pad.fix_k", *v));
  if (auto* v = get("pad.delimiter")) c.pad_delimiter = parse_bool("pad.delimiter", *v);
  if (auto* v = get("augment.op")) c.augment_op = *v;
  if (auto* v = get("augment.ratio")) c.augment_ratio = parse_double("augment.ratio", *v);
  if (auto* v = get("augment.window"))
    c.augment_window = static_cast<int>(parse_int("augment.window", *v));
  if (auto* v = get("augment.count"))
    c.augment_count = static_cast<int>(parse_int("augment.count", *v));
  if (auto* v = get("augment.sim_top_s"))
    c.sim_top_s = static_cast<int>(parse_int("augment.sim_top_s", *v));
  if (auto* v = get("batch_size")) c.batch_size = parse_int("batch_size", *v);
  if (auto* v = get("max_epochs")) c.max_epochs = static_cast<int>(parse_int("max_epochs", *v));
  if (auto* v = get("patience")) c.patience = static_cast<int>(parse_int("patience", *v));
  if (auto* v = get("lr")) c.lr = parse_double("lr", *v);
  if (auto* v = get("precision")) c.precision = *v;
  if (auto* v = get("monitor")) c.monitor = *v;
  if (auto* v = get("seed")) {
    c.seed = parse_u64("seed", *v);
    c.seed_set = true;
  }
  if (auto* v = get("out_dir")) c.out_dir = *v;
  if (auto* v = get("threads")) c.threads = static_cast<int>(parse_int("threads", *v));
  if (auto* v = get("eval.exclude_seen")) c.eval_exclude_seen = parse_bool("eval.exclude_seen", *v);
  if (auto* v = get("eval.batch")) c.eval_batch = parse_int("eval.batch", *v);
  if (auto* v = get("alpha.counts")) c.alpha_counts = *v;

  if (c.dataset_name.empty() && !c.dataset.empty()) c.dataset_name = file_stem(c.dataset);
  c.model.max_len = c.max_len;
  c.validate();
  return c;
}

}  // namespace reppad
