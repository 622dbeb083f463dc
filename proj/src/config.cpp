#include "fedmobi/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "fedmobi/errors.hpp"

namespace fedmobi {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw ConfigError("line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& v, std::size_t line) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    fail(line, "expected a number, got '" + v + "'");
  }
  if (used != v.size()) fail(line, "trailing characters in number '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v, std::size_t line) {
  if (v.empty() || v[0] == '-') fail(line, "expected a non-negative integer, got '" + v + "'");
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    fail(line, "expected a non-negative integer, got '" + v + "'");
  }
  if (used != v.size()) fail(line, "trailing characters in integer '" + v + "'");
  return out;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string raw_line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, raw_line)) {
    ++line_no;
    std::string line = raw_line;
    const std::size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(line_no, "empty section name");
      if (!cfg.section_lines_.count(section)) cfg.section_lines_[section] = line_no;
      cfg.sections_[section];  // a header alone still declares the section
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
    if (section.empty()) fail(line_no, "key outside any [section]");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(line_no, "empty key");
    if (value.empty()) fail(line_no, "empty value for key '" + key + "'");
    auto& sec = cfg.sections_[section];
    if (sec.count(key)) fail(line_no, "duplicate key '" + key + "' in [" + section + "]");
    sec[key] = Entry{value, line_no};
  }
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const ConfigFile::Entry* ConfigFile::find(const std::string& section,
                                          const std::string& key) const {
  const auto sit = sections_.find(section);
  if (sit == sections_.end()) return nullptr;
  const auto kit = sit->second.find(key);
  if (kit == sit->second.end()) return nullptr;
  return &kit->second;
}

bool ConfigFile::has_section(const std::string& section) const {
  return sections_.count(section) != 0;
}

std::size_t ConfigFile::section_line(const std::string& section) const {
  const auto it = section_lines_.find(section);
  return it == section_lines_.end() ? 0 : it->second;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

const std::string& ConfigFile::raw(const std::string& section, const std::string& key) const {
  const Entry* e = find(section, key);
  if (!e) throw ConfigError("missing key '" + key + "' in [" + section + "]");
  return e->value;
}

std::vector<std::string> ConfigFile::section_names() const {
  std::vector<std::string> out;
  for (const auto& [name, entries] : sections_) out.push_back(name);
  return out;
}

std::vector<std::string> ConfigFile::keys(const std::string& section) const {
  std::vector<std::string> out;
  const auto sit = sections_.find(section);
  if (sit == sections_.end()) return out;
  for (const auto& [key, entry] : sit->second) out.push_back(key);
  return out;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
  const Entry* e = find(section, key);
  return e ? e->value : fallback;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  const Entry* e = find(section, key);
  return e ? parse_double(e->value, e->line) : fallback;
}

std::uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key,
                                  std::uint64_t fallback) const {
  const Entry* e = find(section, key);
  return e ? parse_u64(e->value, e->line) : fallback;
}

std::uint32_t ConfigFile::get_u32(const std::string& section, const std::string& key,
                                  std::uint32_t fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  const std::uint64_t v = parse_u64(e->value, e->line);
  if (v > 0xffffffffull) fail(e->line, "value out of range for '" + key + "'");
  return static_cast<std::uint32_t>(v);
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no") return false;
  fail(e->line, "expected a boolean for '" + key + "', got '" + e->value + "'");
}

std::vector<std::uint32_t> ConfigFile::get_u32_list(const std::string& section,
                                                    const std::string& key) const {
  const Entry* e = find(section, key);
  std::vector<std::uint32_t> out;
  if (!e) return out;
  std::istringstream in(e->value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) fail(e->line, "empty element in list '" + key + "'");
    const std::uint64_t v = parse_u64(item, e->line);
    if (v > 0xffffffffull) fail(e->line, "list element out of range in '" + key + "'");
    out.push_back(static_cast<std::uint32_t>(v));
  }
  if (out.empty()) fail(e->line, "empty list for '" + key + "'");
  return out;
}

void ConfigFile::expect_only(const std::string& section,
                             const std::vector<std::string>& allowed) const {
  const auto sit = sections_.find(section);
  if (sit == sections_.end()) return;
  for (const auto& [key, entry] : sit->second) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail(entry.line, "unknown key '" + key + "' in [" + section + "]");
  }
}

static std::uint32_t parse_client_index(const std::string& section, std::size_t line) {
  const std::string suffix = section.substr(std::string("client.").size());
  if (suffix.empty()) fail(line, "client section needs an index: [client.<n>]");
  for (char c : suffix) {
    if (!std::isdigit(static_cast<unsigned char>(c)))
      fail(line, "client index must be a number: [" + section + "]");
  }
  return static_cast<std::uint32_t>(std::stoul(suffix));
}

RunConfig parse_run_config(const std::string& text) {
  const ConfigFile cfg = ConfigFile::parse(text);
  RunConfig rc;

  cfg.expect_only("run", {"mode", "seed", "eval_every_s", "replay_cap", "server_tflops",
                          "target_accuracy", "eval_batch", "eval_samples"});
  const std::string mode = cfg.get_string("run", "mode", "async");
  if (mode == "async") {
    rc.sync = false;
  } else if (mode == "sync") {
    rc.sync = true;
  } else {
    throw ConfigError("unknown run mode '" + mode + "' (expected async or sync)");
  }
  rc.seed = cfg.get_u64("run", "seed", rc.seed);
  rc.eval_every_s = cfg.get_double("run", "eval_every_s", rc.eval_every_s);
  rc.replay_cap = cfg.get_u64("run", "replay_cap", rc.replay_cap);
  rc.server_tflops = cfg.get_double("run", "server_tflops", rc.server_tflops);
  rc.target_accuracy = cfg.get_double("run", "target_accuracy", rc.target_accuracy);
  rc.eval_batch = cfg.get_u64("run", "eval_batch", rc.eval_batch);
  rc.eval_samples = cfg.get_u64("run", "eval_samples", rc.eval_samples);

  cfg.expect_only("task", {"vocab", "num_classes", "seq", "signal", "train_samples"});
  rc.task.vocab = cfg.get_u32("task", "vocab", rc.task.vocab);
  rc.task.num_classes = cfg.get_u32("task", "num_classes", rc.task.num_classes);
  rc.task.seq = cfg.get_u32("task", "seq", rc.task.seq);
  rc.task.signal = cfg.get_double("task", "signal", rc.task.signal);
  rc.train_samples = cfg.get_u64("task", "train_samples", rc.train_samples);

  cfg.expect_only("partition", {"alpha"});
  rc.alpha = cfg.get_double("partition", "alpha", rc.alpha);

  cfg.expect_only("train", {"lr", "weight_decay", "steps_per_arrival", "standalone_epochs",
                            "rank"});
  rc.optimizer.lr = cfg.get_double("train", "lr", rc.optimizer.lr);
  rc.optimizer.weight_decay = cfg.get_double("train", "weight_decay",
                                             rc.optimizer.weight_decay);
  rc.steps_per_arrival = cfg.get_u32("train", "steps_per_arrival", rc.steps_per_arrival);
  rc.standalone_epochs = cfg.get_u32("train", "standalone_epochs", rc.standalone_epochs);
  rc.rank = cfg.get_u32("train", "rank", rc.rank);

  cfg.expect_only("align", {"block_count", "side_hidden", "strategy", "layers"});
  rc.block_count = cfg.get_u32("align", "block_count", rc.block_count);
  rc.side_hidden = cfg.get_u32("align", "side_hidden", rc.side_hidden);
  rc.strategy = layer_strategy_from(cfg.get_string("align", "strategy", "uniform"));
  rc.explicit_layers = cfg.get_u32_list("align", "layers");

  cfg.expect_only("account",
                  {"clients", "samples_per_client", "seq", "act_tokens", "hidden", "num_layers",
                   "block_count", "num_classes", "batch", "rounds", "lora_rank",
                   "perturbations"});
  rc.account.clients = cfg.get_u32("account", "clients", rc.account.clients);
  rc.account.samples_per_client =
      cfg.get_u32("account", "samples_per_client", rc.account.samples_per_client);
  rc.account.seq = cfg.get_u32("account", "seq", rc.account.seq);
  rc.account.act_tokens = cfg.get_u32("account", "act_tokens", rc.account.act_tokens);
  rc.account.hidden = cfg.get_u32("account", "hidden", rc.account.hidden);
  rc.account.num_layers = cfg.get_u32("account", "num_layers", rc.account.num_layers);
  rc.account.block_count = cfg.get_u32("account", "block_count", rc.account.block_count);
  rc.account.num_classes = cfg.get_u32("account", "num_classes", rc.account.num_classes);
  rc.account.batch = cfg.get_u32("account", "batch", rc.account.batch);
  rc.account.rounds = cfg.get_u32("account", "rounds", rc.account.rounds);
  rc.account.lora_rank = cfg.get_u32("account", "lora_rank", rc.account.lora_rank);
  rc.account.perturbations = cfg.get_u32("account", "perturbations", rc.account.perturbations);

  for (const std::string& section : cfg.section_names()) {
    if (section.rfind("backbone.", 0) == 0) {
      cfg.expect_only(section, {"num_layers", "hidden", "heads", "ffn_mult", "max_seq",
                                "init_seed"});
      BackboneConfig bc;
      bc.id = section.substr(std::string("backbone.").size());
      if (bc.id.empty()) throw ConfigError("backbone section needs a name: [backbone.<id>]");
      bc.num_layers = cfg.get_u32(section, "num_layers", bc.num_layers);
      bc.hidden = cfg.get_u32(section, "hidden", bc.hidden);
      bc.heads = cfg.get_u32(section, "heads", bc.heads);
      bc.ffn_mult = cfg.get_u32(section, "ffn_mult", bc.ffn_mult);
      bc.vocab = rc.task.vocab;
      bc.num_classes = rc.task.num_classes;
      bc.max_seq = cfg.get_u32(section, "max_seq", std::max(rc.task.seq, 32u));
      bc.init_seed = cfg.get_u64(section, "init_seed", 0);  // 0 = derive from run seed
      rc.backbones.push_back(bc);
    } else if (section.rfind("client.", 0) == 0) {
      cfg.expect_only(section, {"backbone", "batch_size", "tflops", "bandwidth_mbps",
                                "overhead_s"});
      ClientSpec cs;
      cs.client_id = parse_client_index(section, cfg.section_line(section));
      cs.backbone = cfg.get_string(section, "backbone", "");
      cs.batch_size = cfg.get_u32(section, "batch_size", cs.batch_size);
      cs.profile.tflops = cfg.get_double(section, "tflops", cs.profile.tflops);
      cs.profile.bandwidth_mbps = cfg.get_double(section, "bandwidth_mbps",
                                                 cs.profile.bandwidth_mbps);
      cs.profile.overhead_s = cfg.get_double(section, "overhead_s", cs.profile.overhead_s);
      rc.clients.push_back(cs);
    } else if (section != "run" && section != "task" && section != "partition" &&
               section != "train" && section != "align" && section != "account") {
      throw ConfigError("unknown section [" + section + "]");
    }
  }
  std::sort(rc.clients.begin(), rc.clients.end(),
            [](const ClientSpec& a, const ClientSpec& b) { return a.client_id < b.client_id; });

  rc.validate();
  return rc;
}

RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

void RunConfig::validate() const {
  task.validate();
  account.validate();
  if (backbones.empty()) throw ConfigError("at least one [backbone.<id>] section is required");
  if (clients.empty()) throw ConfigError("at least one [client.<n>] section is required");
  std::set<std::string> backbone_ids;
  for (const BackboneConfig& bc : backbones) {
    BackboneConfig check = bc;
    if (check.init_seed == 0) check.init_seed = 1;  // placeholder; derived later
    check.validate();
    if (!backbone_ids.insert(bc.id).second)
      throw ConfigError("duplicate backbone id: " + bc.id);
    if (bc.max_seq < task.seq)
      throw ConfigError("backbone " + bc.id + " max_seq is shorter than the task sequence");
  }
  std::set<std::uint32_t> client_ids;
  for (const ClientSpec& cs : clients) {
    if (cs.backbone.empty())
      throw ConfigError("client " + std::to_string(cs.client_id) + " needs a backbone key");
    if (!backbone_ids.count(cs.backbone))
      throw ConfigError("client " + std::to_string(cs.client_id) +
                        " references unknown backbone '" + cs.backbone + "'");
    if (!client_ids.insert(cs.client_id).second)
      throw ConfigError("duplicate client id: " + std::to_string(cs.client_id));
    if (cs.batch_size == 0) throw ConfigError("client batch size must be positive");
    cs.profile.validate();
  }
  if (train_samples < clients.size())
    throw ConfigError("train_samples must cover at least one sample per client");
  if (eval_samples == 0) throw ConfigError("eval_samples must be positive");
  if (eval_batch == 0) throw ConfigError("eval_batch must be positive");
  if (alpha <= 0.0) throw ConfigError("partition alpha must be positive");
  if (optimizer.lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (optimizer.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (rank == 0) throw ConfigError("adapter rank must be positive");
  if (eval_every_s < 0.0) throw ConfigError("eval_every_s must be non-negative");
  if (server_tflops < 0.0) throw ConfigError("server_tflops must be non-negative");
  if (target_accuracy < 0.0 || target_accuracy > 1.0)
    throw ConfigError("target_accuracy must lie in [0, 1]");
  if (strategy == LayerStrategy::Explicit && explicit_layers.empty())
    throw ConfigError("explicit layer strategy needs a layers list");
  if (strategy != LayerStrategy::Explicit && !explicit_layers.empty())
    throw ConfigError("a layers list requires strategy = explicit");
}

}  // namespace fedmobi
