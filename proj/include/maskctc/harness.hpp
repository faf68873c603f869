#pragma once

// User-facing orchestration: the training loop with checkpointing and
// metric logging, split evaluation with Table-style reports, and the
// latency benchmark.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "maskctc/checkpoint.hpp"
#include "maskctc/corpus.hpp"
#include "maskctc/decoding.hpp"
#include "maskctc/metrics.hpp"
#include "maskctc/model.hpp"
#include "maskctc/training.hpp"

namespace maskctc {

// Nominal frame shift for the real-time-factor analog: synthetic frames
// stand in for 10 ms of audio each.
constexpr double kFrameShiftSeconds = 0.01;

// Worker thread cap: min(hardware, MASKCTC_THREADS env, requested).
int effective_threads(int requested);

struct RunConfig {
    TrainConfig train;
    ModelConfig model;
    std::string data_dir = "data";
    int checkpoint_keep = 10;
    int average_top = 5;
    double p_thres = 0.999;  // default decode threshold stored with the run
    int threads = 0;         // 0 = all available
};

// Flat key=value config file. Unknown keys are config errors; every key
// is optional and defaults are printed by `train --print-config`.
RunConfig parse_run_config(const std::string& path);
RunConfig run_config_from_text(const std::string& text);
std::string print_run_config(const RunConfig& cfg);

struct TrainResult {
    std::string final_model_path;
    std::string metrics_csv_path;
    std::vector<TrainState::EpochMetrics> history;
};

// Trains per config, writing per-epoch checkpoints (ring buffer), a
// deterministic metrics CSV (no wall-clock columns), and the final
// averaged model. NaN losses abort with previously written checkpoints
// left in place.
TrainResult run_train(const RunConfig& cfg, const std::string& out_dir, bool quiet = false);

struct EvalMode {
    std::string kind;  // "greedy" | "maskctc" | "ar"
    DecodeConfig decode;

    std::string iterations_label() const {
        if (kind == "greedy") return "1";
        if (kind == "ar") return "L";
        return decode.iterations_label();
    }
};

std::vector<EvalMode> parse_eval_modes(const std::string& modes_csv, const std::string& ks_csv, double p_thres,
                                       int max_ar_len);

struct EvalRow {
    std::string model_type;
    std::string mode;
    std::string iterations;
    double ter = 0.0;
    double ser = 0.0;
    int64_t subs = 0, ins = 0, dels = 0, ref_tokens = 0;
    double mean_decoder_calls = 0.0;
    double mean_encoder_calls = 0.0;
    double mean_output_len = 0.0;
    double wall_rtf = 0.0;
};

struct EvalReport {
    std::string model_path;
    std::string dataset_path;
    std::string config_fingerprint;
    std::vector<EvalRow> rows;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
    std::string to_table() const;
    // Deterministic comparison: everything except wall-clock fields.
    bool same_results(const EvalReport& other) const;
};

EvalReport run_eval(const Model& model, const std::string& model_path, const std::vector<Utterance>& utts,
                    const std::string& dataset_path, const std::vector<EvalMode>& modes, int threads = 0,
                    const std::string& trace_path = "");

struct BenchRow {
    std::string model_type;
    std::string mode;
    std::string iterations;
    double median_rtf = 0.0;
    double median_wall = 0.0;  // seconds for the whole split
    double mean_decoder_calls = 0.0;
    double mean_encoder_calls = 0.0;
};

struct BenchReport {
    std::string dataset_path;
    double audio_seconds = 0.0;
    int repeats = 0;
    std::vector<BenchRow> rows;
    // AR-to-NAR ratios when both modes are present (AR median over
    // mask-refinement K=10 median).
    std::optional<double> wall_speedup;
    std::optional<double> call_ratio;

    std::string to_json() const;
    std::string to_table() const;
};

BenchReport run_bench(const Model& nar_model, const std::vector<Utterance>& utts, const std::string& dataset_path,
                      const std::vector<EvalMode>& modes, int repeats, const Model* ar_model = nullptr,
                      int max_ar_len = 200);

// Decodes one mode across a split (optionally in parallel); results come
// back in utterance order.
std::vector<DecodeResult> decode_split(const Model& model, const std::vector<Utterance>& utts, const EvalMode& mode,
                                       int threads);

}  // namespace maskctc
