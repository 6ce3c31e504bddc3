#include "moka/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace moka {

using json = nlohmann::ordered_json;

namespace {

// Rejects keys outside the allowed set so typos never pass silently.
void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void get_to(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

void parse_network(const json& obj, NetworkDims& net) {
  check_keys(obj, {"embed_dim", "hidden_dim", "depth", "attach_blocks"}, "network");
  long long embed = net.embed_dim, hidden = net.hidden_dim, depth = net.depth;
  get_to(obj, "embed_dim", embed);
  get_to(obj, "hidden_dim", hidden);
  get_to(obj, "depth", depth);
  net.embed_dim = embed;
  net.hidden_dim = hidden;
  net.depth = depth;
  get_to(obj, "attach_blocks", net.attach_blocks);
}

void parse_task(const json& obj, SyntheticTaskSpec& task) {
  check_keys(obj,
             {"modalities", "classes", "noise", "signal_scale", "target_modality",
              "query_encoding", "seed"},
             "task");
  if (obj.contains("modalities")) {
    task.modality_tokens.clear();
    task.text_modality.clear();
    for (const auto& m : obj.at("modalities")) {
      check_keys(m, {"name", "tokens", "is_text"}, "task.modalities");
      std::string name;
      long long tokens = 0;
      bool is_text = false;
      get_to(m, "name", name);
      get_to(m, "tokens", tokens);
      get_to(m, "is_text", is_text);
      if (name.empty()) throw ConfigError("modality without a name");
      if (tokens < 0) throw ConfigError("modality '" + name + "' has negative tokens");
      task.modality_tokens.emplace_back(name, static_cast<Index>(tokens));
      if (is_text) {
        if (!task.text_modality.empty())
          throw ConfigError("more than one modality marked is_text");
        task.text_modality = name;
      }
    }
    if (task.text_modality.empty())
      throw ConfigError("exactly one modality must set is_text");
  }
  get_to(obj, "classes", task.classes);
  get_to(obj, "noise", task.noise);
  get_to(obj, "signal_scale", task.signal_scale);
  get_to(obj, "target_modality", task.target_modality);
  get_to(obj, "query_encoding", task.query_encoding);
  get_to(obj, "seed", task.seed);
}

void parse_optimizer(const json& obj, OptimizerConfig& opt) {
  check_keys(obj, {"lr", "beta1", "beta2", "eps", "weight_decay", "warmup_ratio"},
             "optimizer");
  get_to(obj, "lr", opt.lr);
  get_to(obj, "beta1", opt.beta1);
  get_to(obj, "beta2", opt.beta2);
  get_to(obj, "eps", opt.eps);
  get_to(obj, "weight_decay", opt.weight_decay);
  get_to(obj, "warmup_ratio", opt.warmup_ratio);
}

}  // namespace

AdapterSpec RunConfig::adapter_spec() const {
  AdapterSpec spec;
  spec.variant = parse_variant(variant);
  spec.cross_mode = parse_cross_mode(cross_mode);
  spec.rank = rank;
  spec.lambdas = lambdas;
  spec.lambda_text = lambda_text;
  spec.lambda_extra = lambda_extra;
  spec.extra_query = extra_query;
  spec.seed = seed;
  return spec;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions t;
  t.steps = steps;
  t.batch_size = batch_size;
  t.eval_interval = eval_interval;
  t.eval_samples = eval_samples;
  t.log_interval = log_interval;
  return t;
}

void RunConfig::validate() const {
  if (precision != "f32" && precision != "f64")
    throw ConfigError("precision must be 'f32' or 'f64', got '" + precision + "'");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_interval < 1 || log_interval < 1)
    throw ConfigError("intervals must be >= 1");
  if (eval_samples < 1) throw ConfigError("eval_samples must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds list is empty");
  task.validate();
  const SpanLayout layout = task.layout();
  if (network.embed_dim != task.embed_dim)
    throw ConfigError("network embed_dim must equal task embed_dim");
  adapter_spec().validate(network.hidden_dim, network.embed_dim, layout);
  // exercises depth/attach checks
  if (network.depth < 1) throw ConfigError("network depth must be >= 1");
  for (int b : network.attach_blocks)
    if (b < 0 || b >= network.depth)
      throw ConfigError("attach block " + std::to_string(b) + " out of range");
}

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");

  check_keys(doc,
             {"variant", "cross_mode", "rank", "lambdas", "lambda_text",
              "lambda_extra", "extra_query", "seed", "seeds", "precision", "steps",
              "batch_size", "eval_interval", "eval_samples", "log_interval",
              "out_dir", "network", "task", "optimizer"},
             "config");

  RunConfig cfg;
  get_to(doc, "variant", cfg.variant);
  parse_variant(cfg.variant);  // fail fast on unknown names
  if (doc.contains("cross_mode")) {
    get_to(doc, "cross_mode", cfg.cross_mode);
  } else {
    cfg.cross_mode = cfg.variant == "moka" ? "task_centric" : "none";
  }
  parse_cross_mode(cfg.cross_mode);
  get_to(doc, "rank", cfg.rank);
  if (doc.contains("lambdas")) {
    cfg.lambdas.clear();
    for (const auto& [key, value] : doc.at("lambdas").items()) {
      if (!value.is_number())
        throw ConfigError("lambda for '" + key + "' must be a number");
      cfg.lambdas[key] = value.get<double>();
    }
  }
  get_to(doc, "lambda_text", cfg.lambda_text);
  get_to(doc, "lambda_extra", cfg.lambda_extra);
  get_to(doc, "extra_query", cfg.extra_query);
  get_to(doc, "seed", cfg.seed);
  get_to(doc, "seeds", cfg.seeds);
  get_to(doc, "precision", cfg.precision);
  get_to(doc, "steps", cfg.steps);
  get_to(doc, "batch_size", cfg.batch_size);
  get_to(doc, "eval_interval", cfg.eval_interval);
  get_to(doc, "eval_samples", cfg.eval_samples);
  get_to(doc, "log_interval", cfg.log_interval);
  get_to(doc, "out_dir", cfg.out_dir);
  if (doc.contains("network")) parse_network(doc.at("network"), cfg.network);
  if (doc.contains("task")) parse_task(doc.at("task"), cfg.task);
  if (doc.contains("optimizer")) parse_optimizer(doc.at("optimizer"), cfg.optimizer);

  cfg.network.classes = cfg.task.classes;
  cfg.task.embed_dim = cfg.network.embed_dim;

  // Materialize per-modality defaults so emit/parse round-trips exactly.
  const SpanLayout layout = cfg.task.layout();
  for (const auto& name : layout.non_text_names())
    if (!cfg.lambdas.count(name)) cfg.lambdas[name] = 1.0;
  if (cfg.cross_mode == "extra_pair" && cfg.extra_query.empty())
    cfg.extra_query = layout.non_text_names().at(0);

  cfg.validate();
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string emit_config(const RunConfig& cfg) {
  json doc;
  doc["variant"] = cfg.variant;
  doc["cross_mode"] = cfg.cross_mode;
  doc["rank"] = cfg.rank;
  doc["lambdas"] = cfg.lambdas;
  doc["lambda_text"] = cfg.lambda_text;
  doc["lambda_extra"] = cfg.lambda_extra;
  doc["extra_query"] = cfg.extra_query;
  doc["seed"] = cfg.seed;
  doc["seeds"] = cfg.seeds;
  doc["precision"] = cfg.precision;
  doc["steps"] = cfg.steps;
  doc["batch_size"] = cfg.batch_size;
  doc["eval_interval"] = cfg.eval_interval;
  doc["eval_samples"] = cfg.eval_samples;
  doc["log_interval"] = cfg.log_interval;
  doc["out_dir"] = cfg.out_dir;
  doc["network"] = {{"embed_dim", cfg.network.embed_dim},
                    {"hidden_dim", cfg.network.hidden_dim},
                    {"depth", cfg.network.depth},
                    {"attach_blocks", cfg.network.attach_blocks}};
  json mods = json::array();
  for (const auto& [name, tokens] : cfg.task.modality_tokens)
    mods.push_back({{"name", name},
                    {"tokens", tokens},
                    {"is_text", name == cfg.task.text_modality}});
  doc["task"] = {{"modalities", mods},
                 {"classes", cfg.task.classes},
                 {"noise", cfg.task.noise},
                 {"signal_scale", cfg.task.signal_scale},
                 {"target_modality", cfg.task.target_modality},
                 {"query_encoding", cfg.task.query_encoding},
                 {"seed", cfg.task.seed}};
  doc["optimizer"] = {{"lr", cfg.optimizer.lr},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"eps", cfg.optimizer.eps},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"warmup_ratio", cfg.optimizer.warmup_ratio}};
  return doc.dump(2) + "\n";
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return emit_config(a) == emit_config(b);
}

}  // namespace moka
