// Command-line front end: gen-data, train, decode, eval, bench.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "maskctc/harness.hpp"

namespace fs = std::filesystem;
using namespace maskctc;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os << text;
}

RunConfig load_run_config(const std::string& config_path) {
    return config_path.empty() ? RunConfig{} : parse_run_config(config_path);
}

int run(int argc, char** argv) {
    CLI::App app{"Non-autoregressive sequence transduction lab: CTC-initialized iterative mask refinement"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic train/dev/eval corpus");
    std::string gen_config, gen_out = "data";
    uint64_t gen_seed = 0;
    bool gen_has_seed = false;
    int n_train = 2000, n_dev = 200, n_eval = 200;
    gen->add_option("--config", gen_config, "corpus config JSON (defaults when omitted)");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--seed", gen_seed, "override corpus seed")->each([&](const std::string&) { gen_has_seed = true; });
    gen->add_option("--train-count", n_train, "training utterances");
    gen->add_option("--dev-count", n_dev, "dev utterances");
    gen->add_option("--eval-count", n_eval, "eval utterances");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string train_config, train_out = "run", train_data;
    uint64_t train_seed = 0;
    bool train_has_seed = false, print_config = false;
    train->add_option("--config", train_config, "flat key=value training config");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--data", train_data, "dataset directory (overrides config data_dir)");
    train->add_option("--seed", train_seed, "override training seed")->each([&](const std::string&) {
        train_has_seed = true;
    });
    train->add_flag("--print-config", print_config, "print all config keys with their effective values and exit");

    // decode
    auto* dec = app.add_subcommand("decode", "decode a dataset with one mode");
    std::string dec_model, dec_data, dec_out = "decode_out", dec_mode = "maskctc", dec_k = "10";
    double dec_pthres = 0.999;
    int dec_max_ar = 200, dec_threads = 0;
    bool emit_trace = false;
    uint64_t dec_seed = 0;
    dec->add_option("--model", dec_model, "model checkpoint path")->required();
    dec->add_option("--data", dec_data, "dataset file (.mcds)")->required();
    dec->add_option("--out", dec_out, "output directory");
    dec->add_option("--mode", dec_mode, "greedy | maskctc | ar");
    dec->add_option("--p-thres", dec_pthres, "confidence threshold for masking");
    dec->add_option("--k", dec_k, "iteration budget K (integer or num_mask)");
    dec->add_option("--max-ar-len", dec_max_ar, "autoregressive length cap");
    dec->add_option("--threads", dec_threads, "worker threads (0 = all)");
    dec->add_option("--seed", dec_seed, "unused; accepted for interface uniformity");
    dec->add_flag("--emit-trace", emit_trace, "write per-utterance decode traces (.trace.jsonl)");

    // eval
    auto* ev = app.add_subcommand("eval", "decode a split in several modes and report error rates");
    std::string ev_model, ev_data, ev_out = "eval_out", ev_modes = "greedy,maskctc", ev_ks = "10";
    double ev_pthres = 0.999;
    int ev_max_ar = 200, ev_threads = 0;
    uint64_t ev_seed = 0;
    ev->add_option("--model", ev_model, "model checkpoint path")->required();
    ev->add_option("--data", ev_data, "dataset file (.mcds)")->required();
    ev->add_option("--out", ev_out, "output directory");
    ev->add_option("--modes", ev_modes, "comma list of greedy, maskctc, ar");
    ev->add_option("--ks", ev_ks, "comma list of K values for maskctc (integers or num_mask)");
    ev->add_option("--p-thres", ev_pthres, "confidence threshold for masking");
    ev->add_option("--max-ar-len", ev_max_ar, "autoregressive length cap");
    ev->add_option("--threads", ev_threads, "worker threads (0 = all)");
    ev->add_option("--seed", ev_seed, "unused; accepted for interface uniformity");

    // bench
    auto* be = app.add_subcommand("bench", "latency benchmark (single-threaded timing)");
    std::string be_model, be_ar_model, be_data, be_out = "bench_out", be_modes = "greedy,maskctc", be_ks = "1,5,10,num_mask";
    double be_pthres = 0.999;
    int be_max_ar = 200, be_repeats = 3;
    uint64_t be_seed = 0;
    be->add_option("--model", be_model, "model for greedy/maskctc rows")->required();
    be->add_option("--ar-model", be_ar_model, "model for the ar row (optional)");
    be->add_option("--data", be_data, "dataset file (.mcds)")->required();
    be->add_option("--out", be_out, "output directory");
    be->add_option("--modes", be_modes, "comma list of greedy, maskctc, ar");
    be->add_option("--ks", be_ks, "comma list of K values for maskctc rows");
    be->add_option("--p-thres", be_pthres, "confidence threshold for masking");
    be->add_option("--max-ar-len", be_max_ar, "autoregressive length cap");
    be->add_option("--repeats", be_repeats, "timing repeats (median reported)");
    be->add_option("--seed", be_seed, "unused; accepted for interface uniformity");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        CorpusConfig cfg;
        if (!gen_config.empty()) {
            std::ifstream in(gen_config);
            if (!in) throw DataError("cannot open corpus config '" + gen_config + "'");
            std::stringstream ss;
            ss << in.rdbuf();
            cfg = corpus_config_from_json(ss.str());
        }
        if (gen_has_seed) cfg.seed = gen_seed;
        cfg.validate();
        fs::create_directories(gen_out);
        write_text(gen_out + "/manifest.json", corpus_config_to_json(cfg) + "\n");
        write_dataset(gen_split(cfg, 0, n_train, "train"), gen_out + "/train.mcds");
        write_dataset(gen_split(cfg, 1, n_dev, "dev"), gen_out + "/dev.mcds");
        write_dataset(gen_split(cfg, 2, n_eval, "eval"), gen_out + "/eval.mcds");
        std::printf("wrote %d/%d/%d utterances to %s\n", n_train, n_dev, n_eval, gen_out.c_str());
        return 0;
    }

    if (train->parsed()) {
        RunConfig cfg = load_run_config(train_config);
        if (train_has_seed) cfg.train.seed = train_seed;
        if (!train_data.empty()) cfg.data_dir = train_data;
        if (print_config) {
            std::fputs(print_run_config(cfg).c_str(), stdout);
            return 0;
        }
        auto result = run_train(cfg, train_out);
        std::printf("final model: %s\nmetrics: %s\n", result.final_model_path.c_str(),
                    result.metrics_csv_path.c_str());
        return 0;
    }

    if (dec->parsed()) {
        Model model = load_model(dec_model);
        auto utts = read_dataset(dec_data);
        auto modes = parse_eval_modes(dec_mode, dec_k, dec_pthres, dec_max_ar);
        if (modes.size() != 1) throw ConfigError("decode takes exactly one mode");
        fs::create_directories(dec_out);
        const int threads = effective_threads(dec_threads);
        auto results = decode_split(model, utts, modes[0], threads);
        std::ofstream hyps(dec_out + "/hyps.txt", std::ios::trunc);
        std::ofstream trace;
        if (emit_trace) trace.open(dec_out + "/decode.trace.jsonl", std::ios::trunc);
        for (const auto& r : results) {
            hyps << r.trace.utt_id << "\t" << tokens_to_string(r.tokens, model.vocab) << "\n";
            if (emit_trace) trace << trace_to_json(r.trace, model.vocab) << "\n";
        }
        std::printf("decoded %zu utterances -> %s/hyps.txt%s\n", results.size(), dec_out.c_str(),
                    emit_trace ? " (+ decode.trace.jsonl)" : "");
        return 0;
    }

    if (ev->parsed()) {
        Model model = load_model(ev_model);
        auto utts = read_dataset(ev_data);
        auto modes = parse_eval_modes(ev_modes, ev_ks, ev_pthres, ev_max_ar);
        auto report = run_eval(model, ev_model, utts, ev_data, modes, ev_threads);
        fs::create_directories(ev_out);
        write_text(ev_out + "/report.json", report.to_json() + "\n");
        write_text(ev_out + "/report.txt", report.to_table());
        std::fputs(report.to_table().c_str(), stdout);
        return 0;
    }

    if (be->parsed()) {
        Model model = load_model(be_model);
        Model ar_model;
        bool have_ar = !be_ar_model.empty();
        if (have_ar) ar_model = load_model(be_ar_model);
        std::string modes_csv = be_modes;
        if (have_ar && modes_csv.find("ar") == std::string::npos) modes_csv += ",ar";
        auto utts = read_dataset(be_data);
        auto modes = parse_eval_modes(modes_csv, be_ks, be_pthres, be_max_ar);
        auto report = run_bench(model, utts, be_data, modes, be_repeats, have_ar ? &ar_model : nullptr, be_max_ar);
        fs::create_directories(be_out);
        write_text(be_out + "/bench.json", report.to_json() + "\n");
        write_text(be_out + "/bench.txt", report.to_table());
        std::fputs(report.to_table().c_str(), stdout);
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
