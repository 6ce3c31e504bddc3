#include "moka/protocols.hpp"

#include "moka/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace moka {

using json = nlohmann::ordered_json;

namespace {

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw TrainingError("cannot write '" + path + "'");
  out << text;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

template <typename Scalar>
ToyNetwork<Scalar> build_network(const RunConfig& cfg, std::uint64_t seed) {
  NetworkDims dims = cfg.network;
  dims.classes = cfg.task.classes;
  AdapterSpec spec = cfg.adapter_spec();
  spec.seed = seed;
  return ToyNetwork<Scalar>(dims, spec, cfg.task.layout(), seed);
}

template <typename Scalar>
TaskGenerator<Scalar> build_task(const RunConfig& cfg) {
  return TaskGenerator<Scalar>(cfg.task);
}

template <typename Scalar>
std::vector<std::pair<ModalitySequence<Scalar>, int>> eval_set(
    const TaskGenerator<Scalar>& gen, int n) {
  RngStream rng = named_stream(gen.spec().seed, "task.eval");
  return gen.sample_n(rng, n);
}

std::string metrics_csv(const TrainResult& result) {
  std::ostringstream os;
  os << "step,split,loss,accuracy,lr\n";
  for (const auto& row : result.log)
    os << row.step << "," << row.split << "," << fmt(row.loss) << ","
       << fmt(row.accuracy) << "," << fmt(row.lr) << "\n";
  return os.str();
}

json config_echo(const RunConfig& cfg) { return json::parse(emit_config(cfg)); }

template <typename Scalar>
TrainCommandResult run_train_impl(const RunConfig& cfg, bool write_files) {
  auto net = build_network<Scalar>(cfg, cfg.seed);
  auto gen = build_task<Scalar>(cfg);
  TrainCommandResult out;
  out.train = train(net, gen, cfg.optimizer, cfg.train_options(), cfg.seed);
  out.trainable_params = net.trainable_parameters().scalar_count();
  out.frozen_params = net.frozen_parameters().scalar_count();
  out.trainable_fraction =
      static_cast<double>(out.trainable_params) /
      static_cast<double>(out.trainable_params + out.frozen_params);
  if (write_files) {
    ensure_dir(cfg.out_dir);
    write_text(cfg.out_dir + "/metrics.csv", metrics_csv(out.train));
    out.checkpoint_path = cfg.out_dir + "/checkpoint.bin";
    save_checkpoint<Scalar>(out.checkpoint_path, net.all_tensors());
    const SpanLayout layout = cfg.task.layout();
    const auto counts = count_matrices(net.adapter_spec().variant,
                                       static_cast<int>(layout.spans().size()));
    json report;
    report["config"] = config_echo(cfg);
    report["trainable_params"] = out.trainable_params;
    report["frozen_params"] = out.frozen_params;
    report["trainable_fraction"] = out.trainable_fraction;
    report["num_a_per_layer"] = counts.first;
    report["num_b_per_layer"] = counts.second;
    report["initial_eval_accuracy"] = out.train.initial_eval_accuracy;
    report["final_eval_accuracy"] = out.train.final_eval_accuracy;
    report["final_train_loss"] = out.train.final_train_loss;
    report["frozen_checksum"] = out.train.frozen_checksum_after;
    write_text(cfg.out_dir + "/report.json", report.dump(2) + "\n");
  }
  return out;
}

template <typename Scalar>
ToyNetwork<Scalar> restore_network(const RunConfig& cfg, const std::string& path) {
  auto net = build_network<Scalar>(cfg, cfg.seed);
  net.load_tensors(load_checkpoint<Scalar>(path));
  return net;
}

template <typename Scalar>
EvalCommandResult run_eval_impl(const RunConfig& cfg, const std::string& path) {
  auto net = restore_network<Scalar>(cfg, path);
  auto gen = build_task<Scalar>(cfg);
  const auto samples = eval_set(gen, cfg.eval_samples);
  const EvalResult ev = evaluate(net, samples);
  return {ev.accuracy, ev.mean_loss, static_cast<int>(samples.size())};
}

std::string subset_label(const std::set<std::string>& subset, const SpanLayout& layout) {
  if (subset.empty()) return "none";
  if (subset.size() == layout.spans().size()) return "full";
  if (subset.size() == 1) return *subset.begin() + "-only";
  std::string label;
  for (const auto& s : layout.spans()) {
    if (!subset.count(s.modality.name)) continue;
    if (!label.empty()) label += "+";
    label += s.modality.name;
  }
  return label;
}

template <typename Scalar>
PartialResult run_partial_impl(const RunConfig& cfg, const std::string& path,
                               std::vector<std::set<std::string>> subsets,
                               bool write_files) {
  auto net = restore_network<Scalar>(cfg, path);
  auto gen = build_task<Scalar>(cfg);
  const auto samples = eval_set(gen, cfg.eval_samples);
  const SpanLayout layout = cfg.task.layout();

  const auto names = layout.names();
  const std::set<std::string> all(names.begin(), names.end());
  if (subsets.empty()) {
    subsets.push_back(all);
    for (const auto& n : names) subsets.push_back({n});
    subsets.push_back({});
  } else if (std::find(subsets.begin(), subsets.end(), all) == subsets.end()) {
    subsets.insert(subsets.begin(), all);  // always report the reference row
  }

  PartialResult out;
  for (const auto& subset : subsets) {
    const RoutingMask mask = make_routing_mask(subset, layout);
    const EvalResult ev = evaluate(net, samples, &mask);
    out.rows.push_back({subset_label(subset, layout), ev.accuracy});
  }
  if (write_files) {
    ensure_dir(cfg.out_dir);
    std::ostringstream csv;
    csv << "subset,accuracy\n";
    json rows = json::array();
    for (const auto& row : out.rows) {
      csv << row.label << "," << fmt(row.accuracy) << "\n";
      rows.push_back({{"subset", row.label}, {"accuracy", row.accuracy}});
    }
    write_text(cfg.out_dir + "/partial.csv", csv.str());
    json report;
    report["config"] = config_echo(cfg);
    report["rows"] = rows;
    write_text(cfg.out_dir + "/partial.json", report.dump(2) + "\n");
  }
  return out;
}

struct ComparisonCase {
  std::string variant;
  std::string cross_mode;
  int rank;
};

template <typename Scalar>
ComparisonResult run_comparison_impl(const RunConfig& cfg,
                                     const std::vector<ComparisonCase>& cases,
                                     const std::string& name, bool write_files) {
  ComparisonResult out;
  for (const auto& c : cases) {
    std::vector<double> accs;
    for (std::uint64_t seed : cfg.seeds) {
      RunConfig rc = cfg;
      rc.variant = c.variant;
      rc.cross_mode = c.cross_mode;
      rc.rank = c.rank;
      rc.seed = seed;
      auto net = build_network<Scalar>(rc, seed);
      auto gen = build_task<Scalar>(rc);
      TrainResult tr = train(net, gen, rc.optimizer, rc.train_options(), seed);
      out.rows.push_back({c.variant, c.cross_mode, c.rank, seed,
                          tr.final_eval_accuracy, tr.final_train_loss});
      accs.push_back(tr.final_eval_accuracy);
    }
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    const double se = accs.size() > 1
                          ? std::sqrt(var / static_cast<double>(accs.size() - 1)) /
                                std::sqrt(static_cast<double>(accs.size()))
                          : 0.0;
    out.summary.push_back({c.variant, c.cross_mode, c.rank, mean, se});
  }
  if (write_files) {
    ensure_dir(cfg.out_dir);
    std::ostringstream csv;
    csv << "variant,cross_mode,rank,seed,accuracy,final_train_loss\n";
    for (const auto& r : out.rows)
      csv << r.variant << "," << r.cross_mode << "," << r.rank << "," << r.seed
          << "," << fmt(r.accuracy) << "," << fmt(r.final_train_loss) << "\n";
    write_text(cfg.out_dir + "/" + name + ".csv", csv.str());
    json report;
    report["config"] = config_echo(cfg);
    json rows = json::array();
    for (const auto& s : out.summary)
      rows.push_back({{"variant", s.variant},
                      {"cross_mode", s.cross_mode},
                      {"rank", s.rank},
                      {"mean_accuracy", s.mean_accuracy},
                      {"stderr_accuracy", s.stderr_accuracy}});
    report["summary"] = rows;
    report["references"] = json::parse(reference_metrics_json());
    write_text(cfg.out_dir + "/" + name + ".json", report.dump(2) + "\n");
  }
  return out;
}

template <typename Scalar>
std::uint64_t instrumented_adapter_flops(const RunConfig& cfg,
                                         const ComparisonCase& c) {
  RunConfig rc = cfg;
  rc.variant = c.variant;
  rc.cross_mode = c.cross_mode;
  rc.rank = c.rank;
  AdapterSpec spec = rc.adapter_spec();
  spec.seed = cfg.seed;
  const SpanLayout layout = cfg.task.layout();
  Adapter<Scalar> adapter(spec, cfg.network.hidden_dim, cfg.network.embed_dim,
                          layout, "block0.");
  ParamStore<Scalar> store;
  adapter.init_params(store, cfg.seed);
  auto gen = build_task<Scalar>(rc);
  RngStream rng = named_stream(cfg.seed, "efficiency.sample");
  auto [seq, label] = gen.sample(rng);
  (void)label;
  Tape<Scalar> tape;
  auto lm = make_leaves(tape, store);
  Value tokens = tape.leaf(seq.tokens);
  adapter.delta(tape, tokens, layout, nullptr, lm);
  return tape.flops();
}

template <typename Scalar>
double median_forward_ms(const ToyNetwork<Scalar>& net,
                         const ModalitySequence<Scalar>& seq, int passes) {
  for (int i = 0; i < 20; ++i) net.logits(seq);
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(passes));
  for (int i = 0; i < passes; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    net.logits(seq);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

template <typename Scalar>
EfficiencyResult run_efficiency_impl(const RunConfig& cfg, bool write_files,
                                     int timing_passes) {
  const SpanLayout layout = cfg.task.layout();
  const int n = static_cast<int>(layout.spans().size());
  const std::vector<ComparisonCase> cases = {
      {"lora", "none", cfg.rank},
      {"multiple_lora", "none", cfg.rank},
      {"moka", "none", cfg.rank},
      {"moka", cfg.variant == "moka" && cfg.cross_mode != "none" ? cfg.cross_mode
                                                                 : "task_centric",
       cfg.rank},
  };

  auto gen = build_task<Scalar>(cfg);
  RngStream rng = named_stream(cfg.seed, "efficiency.sample");
  auto [seq, label] = gen.sample(rng);
  (void)label;

  EfficiencyResult out;
  double lora_flops = 0.0;
  double lora_ms = 0.0;
  for (const auto& c : cases) {
    RunConfig rc = cfg;
    rc.variant = c.variant;
    rc.cross_mode = c.cross_mode;
    rc.rank = c.rank;
    auto net = build_network<Scalar>(rc, cfg.seed);
    AdapterSpec spec = rc.adapter_spec();
    EfficiencyRow row;
    row.variant = c.variant;
    row.cross_mode = c.cross_mode;
    row.trainable_params = net.trainable_parameters().scalar_count();
    row.total_params = row.trainable_params + net.frozen_parameters().scalar_count();
    row.trainable_fraction = static_cast<double>(row.trainable_params) /
                             static_cast<double>(row.total_params);
    const auto counts = count_matrices(spec.variant, n);
    row.num_a = counts.first;
    row.num_b = counts.second;
    row.adapter_flops_analytic =
        flop_count(spec, cfg.network.hidden_dim, cfg.network.embed_dim, layout);
    row.adapter_flops_instrumented = instrumented_adapter_flops<Scalar>(cfg, c);
    row.median_forward_ms = median_forward_ms(net, seq, timing_passes);
    if (c.variant == "lora") {
      lora_flops = static_cast<double>(row.adapter_flops_analytic);
      lora_ms = row.median_forward_ms;
    }
    row.flops_ratio_vs_lora = static_cast<double>(row.adapter_flops_analytic) / lora_flops;
    row.time_ratio_vs_lora = row.median_forward_ms / lora_ms;
    out.rows.push_back(row);
  }

  // Full-scale dims with typical token-length ratios; analytic only.
  const Index paper_dim = 4096;
  auto paper_ratio = [&](const std::vector<std::pair<std::string, Index>>& counts) {
    const SpanLayout pl = SpanLayout::from_counts(counts, "text");
    AdapterSpec lora_spec;
    lora_spec.variant = AdapterVariant::Lora;
    lora_spec.cross_mode = CrossMode::None;
    lora_spec.rank = cfg.rank;
    AdapterSpec moka_spec;
    moka_spec.variant = AdapterVariant::Moka;
    moka_spec.cross_mode = CrossMode::TaskCentric;
    moka_spec.rank = cfg.rank;
    return static_cast<double>(flop_count(moka_spec, paper_dim, paper_dim, pl)) /
           static_cast<double>(flop_count(lora_spec, paper_dim, paper_dim, pl));
  };
  out.paper_scale.push_back(
      {"VL", paper_ratio({{"visual", 32}, {"text", 96}})});
  out.paper_scale.push_back(
      {"AVL", paper_ratio({{"audio", 32}, {"visual", 32}, {"text", 96}})});
  out.paper_scale.push_back(
      {"AVPL",
       paper_ratio({{"audio", 32}, {"visual", 32}, {"point", 32}, {"text", 96}})});

  if (write_files) {
    ensure_dir(cfg.out_dir);
    std::ostringstream csv;
    csv << "variant,cross_mode,trainable_params,total_params,trainable_fraction,"
           "num_A,num_B,adapter_flops_analytic,adapter_flops_instrumented,"
           "flops_ratio_vs_lora,median_forward_ms,time_ratio_vs_lora\n";
    for (const auto& r : out.rows)
      csv << r.variant << "," << r.cross_mode << "," << r.trainable_params << ","
          << r.total_params << "," << fmt(r.trainable_fraction) << "," << r.num_a
          << "," << r.num_b << "," << r.adapter_flops_analytic << ","
          << r.adapter_flops_instrumented << "," << fmt(r.flops_ratio_vs_lora)
          << "," << fmt(r.median_forward_ms) << "," << fmt(r.time_ratio_vs_lora)
          << "\n";
    write_text(cfg.out_dir + "/efficiency.csv", csv.str());
    json report;
    report["config"] = config_echo(cfg);
    json rows = json::array();
    for (const auto& r : out.rows)
      rows.push_back({{"variant", r.variant},
                      {"cross_mode", r.cross_mode},
                      {"trainable_params", r.trainable_params},
                      {"total_params", r.total_params},
                      {"trainable_fraction", r.trainable_fraction},
                      {"num_A", r.num_a},
                      {"num_B", r.num_b},
                      {"adapter_flops_analytic", r.adapter_flops_analytic},
                      {"adapter_flops_instrumented", r.adapter_flops_instrumented},
                      {"flops_ratio_vs_lora", r.flops_ratio_vs_lora},
                      {"median_forward_ms", r.median_forward_ms},
                      {"time_ratio_vs_lora", r.time_ratio_vs_lora}});
    report["rows"] = rows;
    json paper = json::array();
    for (const auto& p : out.paper_scale)
      paper.push_back({{"scenario", p.scenario},
                       {"moka_over_lora_flops", p.moka_over_lora_flops}});
    report["paper_scale_analytic"] = paper;
    report["references"] = json::parse(reference_metrics_json());
    write_text(cfg.out_dir + "/efficiency.json", report.dump(2) + "\n");
  }
  return out;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

template <typename Scalar>
DumpResult run_dump_attention_impl(const RunConfig& cfg,
                                   const std::optional<std::string>& ckpt,
                                   int sample_index, bool write_files) {
  auto net = ckpt ? restore_network<Scalar>(cfg, *ckpt)
                  : build_network<Scalar>(cfg, cfg.seed);
  auto gen = build_task<Scalar>(cfg);
  const auto samples = eval_set(gen, sample_index + 1);
  const auto& [seq, label] = samples.at(static_cast<std::size_t>(sample_index));
  (void)label;

  AttentionSink sink;
  net.logits(seq, nullptr, &sink);

  DumpResult out;
  out.records = static_cast<int>(sink.records.size());
  if (!write_files) return out;
  ensure_dir(cfg.out_dir);
  for (const auto& rec : sink.records) {
    const std::string base = cfg.out_dir + "/attn_" + sanitize(rec.attachment) +
                             "_" + sanitize(rec.query_modality) + "_" +
                             sanitize(rec.key_modality);
    std::ostringstream csv;
    csv << "query_index,key_index,weight\n";
    for (Index i = 0; i < rec.weights.rows(); ++i)
      for (Index j = 0; j < rec.weights.cols(); ++j)
        csv << i << "," << j << "," << fmt(rec.weights(i, j)) << "\n";
    write_text(base + ".csv", csv.str());
    json sidecar;
    sidecar["attachment"] = rec.attachment;
    sidecar["query_modality"] = rec.query_modality;
    sidecar["key_modality"] = rec.key_modality;
    sidecar["rows"] = rec.weights.rows();
    sidecar["cols"] = rec.weights.cols();
    write_text(base + ".json", sidecar.dump(2) + "\n");
    out.files.push_back(base + ".csv");
  }
  json manifest;
  manifest["sample_index"] = sample_index;
  manifest["files"] = out.files;
  write_text(cfg.out_dir + "/attention_manifest.json", manifest.dump(2) + "\n");
  return out;
}

}  // namespace

TrainCommandResult run_train(const RunConfig& cfg, bool write_files) {
  return cfg.precision == "f64" ? run_train_impl<double>(cfg, write_files)
                                : run_train_impl<float>(cfg, write_files);
}

EvalCommandResult run_eval(const RunConfig& cfg, const std::string& path) {
  return cfg.precision == "f64" ? run_eval_impl<double>(cfg, path)
                                : run_eval_impl<float>(cfg, path);
}

PartialResult run_partial(const RunConfig& cfg, const std::string& path,
                          const std::vector<std::set<std::string>>& subsets,
                          bool write_files) {
  return cfg.precision == "f64"
             ? run_partial_impl<double>(cfg, path, subsets, write_files)
             : run_partial_impl<float>(cfg, path, subsets, write_files);
}

ComparisonResult run_ablate(const RunConfig& cfg, bool write_files) {
  const std::vector<ComparisonCase> cases = {
      {"lora", "none", cfg.rank},
      {"multiple_lora", "none", cfg.rank},
      {"moka", "none", cfg.rank},
      {"moka", "task_centric", cfg.rank},
  };
  return cfg.precision == "f64"
             ? run_comparison_impl<double>(cfg, cases, "ablate", write_files)
             : run_comparison_impl<float>(cfg, cases, "ablate", write_files);
}

ComparisonResult run_variants(const RunConfig& cfg, bool write_files) {
  const std::vector<ComparisonCase> cases = {
      {"lora", "none", cfg.rank},
      {"multiple_lora", "none", cfg.rank},
      {"moka", "reversed_query", cfg.rank},
      {"moka", "naive", cfg.rank},
      {"moka", "task_centric", cfg.rank},
  };
  return cfg.precision == "f64"
             ? run_comparison_impl<double>(cfg, cases, "variants", write_files)
             : run_comparison_impl<float>(cfg, cases, "variants", write_files);
}

ComparisonResult run_rank_sweep(const RunConfig& cfg, bool write_files) {
  std::vector<ComparisonCase> cases;
  const std::string moka_mode =
      cfg.variant == "moka" && cfg.cross_mode != "none" ? cfg.cross_mode
                                                        : "task_centric";
  for (int r : {4, 8, 12}) {
    cases.push_back({"lora", "none", r});
    cases.push_back({"moka", moka_mode, r});
  }
  return cfg.precision == "f64"
             ? run_comparison_impl<double>(cfg, cases, "rank_sweep", write_files)
             : run_comparison_impl<float>(cfg, cases, "rank_sweep", write_files);
}

EfficiencyResult run_efficiency(const RunConfig& cfg, bool write_files,
                                int timing_passes) {
  return cfg.precision == "f64"
             ? run_efficiency_impl<double>(cfg, write_files, timing_passes)
             : run_efficiency_impl<float>(cfg, write_files, timing_passes);
}

DumpResult run_dump_attention(const RunConfig& cfg,
                              const std::optional<std::string>& checkpoint_path,
                              int sample_index, bool write_files) {
  return cfg.precision == "f64"
             ? run_dump_attention_impl<double>(cfg, checkpoint_path, sample_index,
                                               write_files)
             : run_dump_attention_impl<float>(cfg, checkpoint_path, sample_index,
                                              write_files);
}

GradCheckReport run_gradcheck(const RunConfig& cfg, bool write_files) {
  GradCheckReport report = gradcheck_suite(cfg.seeds);
  if (write_files) {
    ensure_dir(cfg.out_dir);
    json rows = json::array();
    for (const auto& r : report.rows)
      rows.push_back({{"variant", r.variant},
                      {"cross_mode", r.cross_mode},
                      {"max_rel_err", r.max_rel_err},
                      {"pass", r.pass}});
    json doc;
    doc["threshold"] = report.threshold;
    doc["all_pass"] = report.all_pass;
    doc["rows"] = rows;
    write_text(cfg.out_dir + "/gradcheck.json", doc.dump(2) + "\n");
  }
  return report;
}

}  // namespace moka
