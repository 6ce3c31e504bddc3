// Command-line harness for the adapter experiments: training runs,
// partial-modality inference, ablations, variant comparisons, rank sweeps,
// efficiency accounting, attention dumps, and the gradient-check suite.

#include "moka/checkpoint.hpp"
#include "moka/protocols.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string variant;
  std::string precision;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON run configuration");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_option("--variant", flags.variant,
                  "adapter variant (lora, multiple_lora, unimodal_lora, "
                  "uni_plus_mm, uni_plus_mm_gated, moka)");
  cmd->add_option("--precision", flags.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  flags.seed.reset();
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&flags](const std::uint64_t& s) { flags.seed = s; },
      "master seed override");
}

moka::RunConfig load_config(const CommonFlags& flags) {
  moka::RunConfig cfg = flags.config_path.empty()
                            ? moka::parse_config("{}")
                            : moka::parse_config_file(flags.config_path);
  if (!flags.variant.empty()) {
    cfg.variant = flags.variant;
    cfg.cross_mode = flags.variant == "moka" ? "task_centric" : "none";
  }
  if (!flags.precision.empty()) cfg.precision = flags.precision;
  if (flags.seed) cfg.seed = *flags.seed;
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  cfg.validate();
  return cfg;
}

std::set<std::string> parse_modalities(const std::string& list) {
  std::set<std::string> out;
  if (list == "none") return out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(item);
  return out;
}

void print_comparison(const moka::ComparisonResult& result) {
  std::cout << std::left << std::setw(18) << "variant" << std::setw(16)
            << "cross_mode" << std::setw(6) << "rank" << std::setw(12)
            << "mean_acc" << "stderr\n";
  for (const auto& s : result.summary)
    std::cout << std::left << std::setw(18) << s.variant << std::setw(16)
              << s.cross_mode << std::setw(6) << s.rank << std::setw(12)
              << std::setprecision(4) << std::fixed << s.mean_accuracy
              << std::setprecision(4) << s.stderr_accuracy << "\n";
  std::cout.unsetf(std::ios::fixed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MokA adapter experiment harness"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* train = app.add_subcommand("train", "train one run from a config");
  add_common(train, flags);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on held-out data");
  add_common(eval, flags);
  std::string eval_ckpt;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();

  auto* partial =
      app.add_subcommand("partial-infer", "partial-modality inference protocol");
  add_common(partial, flags);
  std::string partial_ckpt, modalities;
  partial->add_option("--checkpoint", partial_ckpt, "checkpoint path")->required();
  partial->add_option("--modalities", modalities,
                      "comma-separated subset (or 'none'); default battery if absent");

  auto* ablate = app.add_subcommand(
      "ablate", "lora vs multiple_lora vs moka w/o cross-attention vs moka");
  add_common(ablate, flags);

  auto* variants = app.add_subcommand(
      "variants", "cross-modal interaction variants, seed-matched");
  add_common(variants, flags);

  auto* sweep = app.add_subcommand("rank-sweep", "rank in {4, 8, 12}");
  add_common(sweep, flags);

  auto* efficiency = app.add_subcommand(
      "efficiency", "parameter, flop, and forward-time accounting");
  add_common(efficiency, flags);

  auto* dump = app.add_subcommand("dump-attention", "write attention weight CSVs");
  add_common(dump, flags);
  std::string dump_ckpt;
  int sample_index = 0;
  dump->add_option("--checkpoint", dump_ckpt, "checkpoint path (fresh init if absent)");
  dump->add_option("--sample", sample_index, "held-out sample index");

  auto* gradcheck =
      app.add_subcommand("gradcheck", "backward pass vs finite differences");
  add_common(gradcheck, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const moka::RunConfig cfg = load_config(flags);

    if (*train) {
      const auto result = moka::run_train(cfg);
      std::cout << "final_eval_accuracy " << result.train.final_eval_accuracy
                << "\nfinal_train_loss " << result.train.final_train_loss
                << "\ncheckpoint " << result.checkpoint_path << "\n";
    } else if (*eval) {
      const auto result = moka::run_eval(cfg, eval_ckpt);
      std::cout << "accuracy " << result.accuracy << " (" << result.samples
                << " samples)\n";
    } else if (*partial) {
      std::vector<std::set<std::string>> subsets;
      if (partial->count("--modalities"))
        subsets.push_back(parse_modalities(modalities));
      const auto result = moka::run_partial(cfg, partial_ckpt, subsets);
      std::cout << "subset,accuracy\n";
      for (const auto& row : result.rows)
        std::cout << row.label << "," << row.accuracy << "\n";
    } else if (*ablate) {
      print_comparison(moka::run_ablate(cfg));
    } else if (*variants) {
      print_comparison(moka::run_variants(cfg));
    } else if (*sweep) {
      print_comparison(moka::run_rank_sweep(cfg));
    } else if (*efficiency) {
      const auto result = moka::run_efficiency(cfg);
      std::cout << "variant,cross_mode,trainable_fraction,num_A,num_B,"
                   "flops_ratio,time_ratio\n";
      for (const auto& r : result.rows)
        std::cout << r.variant << "," << r.cross_mode << ","
                  << r.trainable_fraction << "," << r.num_a << "," << r.num_b
                  << "," << r.flops_ratio_vs_lora << "," << r.time_ratio_vs_lora
                  << "\n";
      for (const auto& p : result.paper_scale)
        std::cout << "paper_scale_" << p.scenario << " flops_ratio "
                  << p.moka_over_lora_flops << "\n";
    } else if (*dump) {
      std::optional<std::string> ckpt;
      if (!dump_ckpt.empty()) ckpt = dump_ckpt;
      const auto result = moka::run_dump_attention(cfg, ckpt, sample_index);
      std::cout << result.records << " attention records\n";
      for (const auto& f : result.files) std::cout << f << "\n";
    } else if (*gradcheck) {
      const auto report = moka::run_gradcheck(cfg);
      for (const auto& r : report.rows)
        std::cout << std::left << std::setw(18) << r.variant << std::setw(16)
                  << r.cross_mode << (r.pass ? "pass" : "FAIL")
                  << "  max_rel_err " << r.max_rel_err << "\n";
      if (!report.all_pass) {
        std::cerr << "gradient check failed\n";
        return 1;
      }
    }
  } catch (const moka::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
