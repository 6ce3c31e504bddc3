#include "moka/protocols.hpp"

namespace moka {

// Mirrors data/references.json; a test keeps the two in sync.
const std::string& reference_metrics_json() {
  static const std::string text = R"json({
  "note": "Published full-scale reference results, for qualitative comparison with desk-scale runs only. Never used as pass/fail thresholds.",
  "matrix_counts": {
    "lora": {"A": "1", "B": "1"},
    "multiple_lora": {"A": "N", "B": "N"},
    "unimodal_lora": {"A": "N", "B": "N"},
    "uni_plus_mm": {"A": "N+1", "B": "2"},
    "uni_plus_mm_gated": {"A": "N+1", "B": "2"},
    "moka": {"A": "N", "B": "1"}
  },
  "efficiency_llama2": {
    "trainable_fraction_percent": {"lora": 1.27, "multiple_lora": 1.43, "moka": 1.33},
    "forward_time_ratio": {"lora": 1.000, "multiple_lora": 1.006, "moka": 1.069},
    "pope_accuracy": {"lora": 70.28, "multiple_lora": 68.20, "moka": 74.23}
  },
  "flops_and_latency_ratios": {
    "VL": {"flops": 1.009, "memory": 1.001, "forward_time": 1.069},
    "AVL": {"flops": 1.021, "memory": 1.001, "forward_time": 1.134},
    "AVPL": {"flops": 1.013, "memory": 1.002, "forward_time": 1.213}
  },
  "ablation_llama2": {
    "columns": ["MUSIC-AVQA", "POPE", "AIR-Bench"],
    "lora": [73.41, 70.28, 31.75],
    "multiple_lora": [72.66, 68.20, 31.97],
    "moka_without_cross_attention": [74.85, 73.57, 33.25],
    "moka": [75.71, 74.23, 39.64]
  },
  "cross_modal_variants_llama2": {
    "columns": ["MUSIC-AVQA", "AVE", "MME_percep", "MMBench", "POPE", "SEED-Bench"],
    "lora": [73.41, 69.84, 908.52, 50.64, 70.28, 39.71],
    "multiple_lora": [72.66, 71.77, 882.87, 49.83, 68.20, 38.44],
    "reversed_query_attention": [74.94, 72.59, 955.18, 51.25, 72.94, 39.91],
    "naive_interaction": [75.04, 73.18, 996.73, 51.49, 73.52, 40.17],
    "moka": [75.71, 74.68, 1025.86, 52.74, 74.23, 40.45]
  },
  "rank_sweep_llama2": {
    "columns": ["MUSIC-AVQA", "AVE"],
    "lora": {"4": [73.41, 69.84], "8": [73.56, 70.01], "12": [73.73, 70.07]},
    "moka": {"4": [75.71, 74.68], "8": [74.68, 74.71], "12": [74.89, 74.36]}
  },
  "extra_pair_llama2": {
    "columns": ["MUSIC-AVQA", "AVE"],
    "lora": [73.41, 69.84],
    "moka": [75.71, 74.68],
    "moka_audio_query_attention": [75.78, 74.53],
    "moka_video_query_attention": [75.76, 74.81]
  },
  "projected_attention_llama2": {
    "columns": ["MUSIC-AVQA", "MME_percep", "MMBench", "POPE", "SEED-Bench"],
    "lora": [73.41, 908.52, 50.64, 70.28, 39.71],
    "multiple_lora": [72.66, 882.87, 49.83, 68.20, 38.44],
    "moka_with_linear_projection": [73.83, 926.77, 53.97, 72.43, 41.01],
    "moka": [75.71, 1025.86, 52.74, 74.23, 40.45]
  },
  "four_modality_mcub3": {"lora": 37.41, "moka": 45.58}
}
)json";
  return text;
}

}  // namespace moka
