#include "maskctc/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "maskctc/errors.hpp"

namespace fs = std::filesystem;

namespace maskctc {

namespace {

using Clock = std::chrono::steady_clock;

// Runs f(i) for i in [0, n); results must go into per-index slots. The
// first worker exception is rethrown on the caller thread.
template <typename F>
void parallel_for(int n, int threads, F&& f) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    int workers = std::min(threads, n);
    std::vector<std::thread> pool;
    std::mutex err_mu;
    std::exception_ptr err;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int i = w; i < n; i += workers) f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

double total_audio_seconds(const std::vector<Utterance>& utts) {
    int64_t frames = 0;
    for (const auto& u : utts) frames += u.feats.frames;
    return static_cast<double>(frames) * kFrameShiftSeconds;
}

// rng stream labels for the training loop
constexpr uint64_t kParamStream = 1;
constexpr uint64_t kShuffleStream = 2;
constexpr uint64_t kTrainUttStream = 3;
constexpr uint64_t kDevUttStream = 4;

}  // namespace

int effective_threads(int requested) {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    int n = requested > 0 ? std::min(requested, hw) : hw;
    if (const char* env = std::getenv("MASKCTC_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return std::max(n, 1);
}

// ---------------------------------------------------------------------------
// config file

namespace {

bool parse_bool_like(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace

RunConfig run_config_from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string t = trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key = value: '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        try {
            if (key == "model_type") cfg.train.model_type = model_type_from_name(val);
            else if (key == "epochs") cfg.train.epochs = std::stoi(val);
            else if (key == "batch_size") cfg.train.batch_size = std::stoi(val);
            else if (key == "lr_peak") cfg.train.lr_peak = std::stof(val);
            else if (key == "warmup_steps") cfg.train.warmup_steps = std::stoi(val);
            else if (key == "lambda") cfg.train.lambda_ar = std::stof(val);
            else if (key == "gamma") cfg.train.gamma_nar = std::stof(val);
            else if (key == "seed") cfg.train.seed = std::stoull(val);
            else if (key == "label_smoothing") cfg.train.label_smoothing = std::stof(val);
            else if (key == "enc_layers") cfg.model.enc_layers = std::stoi(val);
            else if (key == "dec_layers") cfg.model.dec_layers = std::stoi(val);
            else if (key == "heads") cfg.model.heads = std::stoi(val);
            else if (key == "d_model") cfg.model.d_model = std::stoi(val);
            else if (key == "d_ff") cfg.model.d_ff = std::stoi(val);
            else if (key == "downsample_factor") cfg.model.downsample_factor = std::stoi(val);
            else if (key == "dropout") cfg.model.dropout_rate = std::stof(val);
            else if (key == "data_dir") cfg.data_dir = val;
            else if (key == "checkpoint_keep") cfg.checkpoint_keep = std::stoi(val);
            else if (key == "average_top") cfg.average_top = std::stoi(val);
            else if (key == "p_thres") cfg.p_thres = std::stod(val);
            else if (key == "threads") cfg.threads = std::stoi(val);
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("bad value for config key '" + key + "': '" + val + "'");
        }
    }
    (void)parse_bool_like;  // reserved for future boolean keys
    cfg.train.validate();
    cfg.model.validate();
    if (cfg.checkpoint_keep < 1 || cfg.average_top < 1)
        throw ConfigError("checkpoint_keep and average_top must be >= 1");
    return cfg;
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return run_config_from_text(ss.str());
}

std::string print_run_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "model_type = " << model_type_name(cfg.train.model_type) << "\n";
    os << "epochs = " << cfg.train.epochs << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "lr_peak = " << cfg.train.lr_peak << "\n";
    os << "warmup_steps = " << cfg.train.warmup_steps << "\n";
    os << "lambda = " << cfg.train.lambda_ar << "\n";
    os << "gamma = " << cfg.train.gamma_nar << "\n";
    os << "seed = " << cfg.train.seed << "\n";
    os << "label_smoothing = " << cfg.train.label_smoothing << "\n";
    os << "enc_layers = " << cfg.model.enc_layers << "\n";
    os << "dec_layers = " << cfg.model.dec_layers << "\n";
    os << "heads = " << cfg.model.heads << "\n";
    os << "d_model = " << cfg.model.d_model << "\n";
    os << "d_ff = " << cfg.model.d_ff << "\n";
    os << "downsample_factor = " << cfg.model.downsample_factor << "\n";
    os << "dropout = " << cfg.model.dropout_rate << "\n";
    os << "data_dir = " << cfg.data_dir << "\n";
    os << "checkpoint_keep = " << cfg.checkpoint_keep << "\n";
    os << "average_top = " << cfg.average_top << "\n";
    os << "p_thres = " << cfg.p_thres << "\n";
    os << "threads = " << cfg.threads << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// training loop

namespace {

// Gradients of one utterance, flattened in parameter-map order.
struct UttWork {
    std::vector<float> flat_grads;
    double loss = 0.0;
    bool skipped = false;
};

std::vector<float> flatten_grads(const BoundModel<float>& bound) {
    size_t total = 0;
    for (const auto& [name, t] : bound.p) total += t.values().size();
    std::vector<float> flat;
    flat.reserve(total);
    for (const auto& [name, t] : bound.p) {
        const auto& g = t.node()->grad;
        if (g.empty()) {
            flat.insert(flat.end(), t.values().size(), 0.0f);
        } else {
            flat.insert(flat.end(), g.begin(), g.end());
        }
    }
    return flat;
}

void accumulate_flat(Model& model, const std::vector<float>& flat, float scale_by) {
    size_t off = 0;
    for (auto& [name, t] : model.params) {
        auto& g = t.grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += scale_by * flat[off + i];
        off += g.size();
    }
    if (off != flat.size()) throw ContractError("flat gradient size mismatch");
}

double dev_greedy_accuracy(const Model& model, const std::vector<Utterance>& dev, int threads) {
    std::vector<std::vector<int>> hyps(dev.size());
    parallel_for(static_cast<int>(dev.size()), threads, [&](int i) {
        hyps[static_cast<size_t>(i)] = ctc_greedy_decode(model, dev[static_cast<size_t>(i)].feats).tokens;
    });
    ErrorStats stats;
    for (size_t i = 0; i < dev.size(); ++i) stats.add(dev[i].transcript, hyps[i]);
    return 1.0 - stats.token_error_rate();
}

}  // namespace

TrainResult run_train(const RunConfig& cfg, const std::string& out_dir, bool quiet) {
    cfg.train.validate();
    cfg.model.validate();
    const std::string ckpt_dir = out_dir + "/checkpoints";
    fs::create_directories(ckpt_dir);

    const std::string manifest_path = cfg.data_dir + "/manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw DataError("missing corpus manifest '" + manifest_path + "'");
    std::stringstream mbuf;
    mbuf << mf.rdbuf();
    CorpusConfig corpus_cfg = corpus_config_from_json(mbuf.str());

    auto train_utts = read_dataset(cfg.data_dir + "/train.mcds");
    auto dev_utts = read_dataset(cfg.data_dir + "/dev.mcds");
    if (train_utts.empty()) throw DataError("training split is empty");

    Vocab vocab = Vocab::make_synthetic(corpus_cfg.vocab_size);
    Model model = Model::init(cfg.model, vocab, corpus_cfg.feat_dim, cfg.train.model_type,
                              Rng(cfg.train.seed).split(kParamStream).next_u64());

    TrainState state;
    LrSchedule sched{static_cast<double>(cfg.train.lr_peak), cfg.train.warmup_steps};
    Rng shuffle_rng = Rng(cfg.train.seed).split(kShuffleStream);
    const int threads = effective_threads(cfg.threads);

    const std::string csv_path = out_dir + "/metrics.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw DataError("cannot open '" + csv_path + "' for writing");
    csv << "epoch,train_loss,dev_loss,dev_acc,skipped\n";

    std::deque<std::pair<std::string, double>> ring;  // (path, dev_acc)

    std::vector<int> order(train_utts.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
        auto epoch_t0 = Clock::now();
        for (size_t i = order.size(); i > 1; --i) {
            int j = shuffle_rng.uniform_int(0, static_cast<int>(i) - 1);
            std::swap(order[i - 1], order[static_cast<size_t>(j)]);
        }

        double loss_sum = 0.0;
        int64_t loss_count = 0;
        int skipped = 0;
        const int B = cfg.train.batch_size;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(B)) {
            const int n = static_cast<int>(std::min<size_t>(static_cast<size_t>(B), order.size() - start));
            std::vector<UttWork> work(static_cast<size_t>(n));
            parallel_for(n, threads, [&](int s) {
                const int idx = order[start + static_cast<size_t>(s)];
                const Utterance& u = train_utts[static_cast<size_t>(idx)];
                Rng utt_rng = Rng(cfg.train.seed)
                                  .split(kTrainUttStream)
                                  .split(static_cast<uint64_t>(epoch))
                                  .split(static_cast<uint64_t>(idx));
                auto bound = model.bind<float>(true, &utt_rng);
                bool skip = false;
                auto loss = utterance_loss(bound, u.feats, u.transcript, cfg.train, utt_rng, &skip);
                auto& slot = work[static_cast<size_t>(s)];
                if (skip) {
                    slot.skipped = true;
                    return;
                }
                slot.loss = static_cast<double>(loss.item());
                if (std::isnan(slot.loss)) throw NumericError("NaN loss on utterance '" + u.id + "'");
                backward(loss);
                slot.flat_grads = flatten_grads(bound);
            });
            int contributed = 0;
            for (const auto& w : work)
                if (!w.skipped) ++contributed;
            if (contributed == 0) {
                skipped += n;
                continue;
            }
            const float inv = 1.0f / static_cast<float>(contributed);
            for (const auto& w : work) {
                if (w.skipped) {
                    ++skipped;
                    continue;
                }
                accumulate_flat(model, w.flat_grads, inv);
                loss_sum += w.loss;
                ++loss_count;
            }
            optimizer_step(model.params, state, sched);
        }

        // dev loss (eval mode) and greedy-CTC dev accuracy
        std::vector<double> dev_losses(dev_utts.size(), 0.0);
        std::vector<char> dev_skip(dev_utts.size(), 0);
        parallel_for(static_cast<int>(dev_utts.size()), threads, [&](int i) {
            const Utterance& u = dev_utts[static_cast<size_t>(i)];
            Rng utt_rng = Rng(cfg.train.seed)
                              .split(kDevUttStream)
                              .split(static_cast<uint64_t>(epoch))
                              .split(static_cast<uint64_t>(i));
            auto bound = model.bind<float>(false, nullptr);
            bool skip = false;
            auto loss = utterance_loss(bound, u.feats, u.transcript, cfg.train, utt_rng, &skip);
            if (skip) dev_skip[static_cast<size_t>(i)] = 1;
            else dev_losses[static_cast<size_t>(i)] = static_cast<double>(loss.item());
        });
        double dev_loss_sum = 0.0;
        int64_t dev_count = 0;
        for (size_t i = 0; i < dev_utts.size(); ++i) {
            if (dev_skip[i]) continue;
            dev_loss_sum += dev_losses[i];
            ++dev_count;
        }
        const double train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        const double dev_loss = dev_count ? dev_loss_sum / static_cast<double>(dev_count) : 0.0;
        const double dev_acc = dev_utts.empty() ? 0.0 : dev_greedy_accuracy(model, dev_utts, threads);

        char row[160];
        std::snprintf(row, sizeof(row), "%d,%.6f,%.6f,%.6f,%d\n", epoch, train_loss, dev_loss, dev_acc, skipped);
        csv << row;
        csv.flush();
        state.history.push_back({epoch, train_loss, dev_loss, dev_acc, skipped});

        char name[64];
        std::snprintf(name, sizeof(name), "epoch_%04d.mctc", epoch);
        const std::string ckpt_path = ckpt_dir + "/" + name;
        save_model(model, ckpt_path);
        ring.emplace_back(ckpt_path, dev_acc);
        while (static_cast<int>(ring.size()) > cfg.checkpoint_keep) {
            fs::remove(ring.front().first);
            fs::remove(ring.front().first + ".json");
            ring.pop_front();
        }
        if (!quiet) {
            std::fprintf(stderr, "[train] epoch %d/%d loss %.4f dev_loss %.4f dev_acc %.4f skipped %d (%.1fs)\n",
                         epoch, cfg.train.epochs, train_loss, dev_loss, dev_acc, skipped,
                         std::chrono::duration<double>(Clock::now() - epoch_t0).count());
        }
    }

    // final model: mean of the top checkpoints by dev accuracy
    std::vector<std::string> paths;
    std::vector<double> scores;
    for (const auto& [p, acc] : ring) {
        paths.push_back(p);
        scores.push_back(acc);
    }
    auto top = select_top_by_score(scores, static_cast<size_t>(cfg.average_top));
    std::vector<std::string> selected;
    for (size_t i : top) selected.push_back(paths[i]);
    Model final_model = model;
    final_model.params = average_checkpoints(selected);
    const std::string final_path = out_dir + "/final.mctc";
    save_model(final_model, final_path);
    if (!quiet) std::fprintf(stderr, "[train] averaged %zu checkpoints -> %s\n", selected.size(), final_path.c_str());

    return {final_path, csv_path, state.history};
}

// ---------------------------------------------------------------------------
// evaluation

std::vector<EvalMode> parse_eval_modes(const std::string& modes_csv, const std::string& ks_csv, double p_thres,
                                       int max_ar_len) {
    auto split_csv = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(item);
        return out;
    };
    std::vector<EvalMode> modes;
    for (const auto& kind : split_csv(modes_csv)) {
        if (kind == "greedy") {
            EvalMode m;
            m.kind = "greedy";
            m.decode.p_thres = 0.0;
            modes.push_back(std::move(m));
        } else if (kind == "ar") {
            EvalMode m;
            m.kind = "ar";
            m.decode.max_ar_len = max_ar_len;
            modes.push_back(std::move(m));
        } else if (kind == "maskctc") {
            for (const auto& k : split_csv(ks_csv)) {
                EvalMode m;
                m.kind = "maskctc";
                m.decode.p_thres = p_thres;
                m.decode.max_ar_len = max_ar_len;
                if (k == "num_mask" || k == "#mask") {
                    m.decode.num_mask_mode = true;
                } else {
                    try {
                        m.decode.k_iters = std::stoi(k);
                    } catch (const std::exception&) {
                        throw ConfigError("bad K value '" + k + "'");
                    }
                }
                m.decode.validate();
                modes.push_back(std::move(m));
            }
        } else {
            throw ConfigError("unknown decode mode '" + kind + "' (expected greedy, maskctc or ar)");
        }
    }
    if (modes.empty()) throw ConfigError("no decode modes requested");
    return modes;
}

std::vector<DecodeResult> decode_split(const Model& model, const std::vector<Utterance>& utts, const EvalMode& mode,
                                       int threads) {
    std::vector<DecodeResult> results(utts.size());
    parallel_for(static_cast<int>(utts.size()), threads, [&](int i) {
        const Utterance& u = utts[static_cast<size_t>(i)];
        auto& slot = results[static_cast<size_t>(i)];
        if (mode.kind == "greedy") slot = ctc_greedy_decode(model, u.feats, u.id);
        else if (mode.kind == "maskctc") slot = maskctc_decode(model, u.feats, mode.decode, u.id);
        else if (mode.kind == "ar") slot = ar_greedy_decode(model, u.feats, mode.decode.max_ar_len, u.id);
        else throw ConfigError("unknown decode mode '" + mode.kind + "'");
    });
    return results;
}

EvalReport run_eval(const Model& model, const std::string& model_path, const std::vector<Utterance>& utts,
                    const std::string& dataset_path, const std::vector<EvalMode>& modes, int threads,
                    const std::string& trace_path) {
    if (utts.empty()) throw DataError("evaluation split is empty");
    const int W = effective_threads(threads);
    EvalReport report;
    report.model_path = model_path;
    report.dataset_path = dataset_path;
    std::string fp = model_path + "|" + dataset_path + "|" + model_type_name(model.type);
    for (const auto& m : modes) {
        fp += "|" + m.kind + ":" + m.iterations_label() + ":" + std::to_string(m.decode.p_thres);
    }
    report.config_fingerprint = hex64(fnv1a(fp));

    std::ofstream trace_out;
    if (!trace_path.empty()) {
        trace_out.open(trace_path, std::ios::trunc);
        if (!trace_out) throw DataError("cannot open trace file '" + trace_path + "'");
    }

    const double audio_s = total_audio_seconds(utts);
    for (const auto& mode : modes) {
        auto results = decode_split(model, utts, mode, W);
        ErrorStats stats;
        double wall = 0.0;
        int64_t dec_calls = 0, enc_calls = 0, out_len = 0;
        for (size_t i = 0; i < utts.size(); ++i) {
            stats.add(utts[i].transcript, results[i].tokens);
            wall += results[i].trace.wall_time;
            dec_calls += results[i].trace.decoder_calls;
            enc_calls += results[i].trace.encoder_calls;
            out_len += static_cast<int64_t>(results[i].tokens.size());
            if (trace_out.is_open()) trace_out << trace_to_json(results[i].trace, model.vocab) << "\n";
        }
        EvalRow row;
        row.model_type = model_type_name(model.type);
        row.mode = mode.kind;
        row.iterations = mode.iterations_label();
        row.ter = stats.token_error_rate();
        row.ser = stats.sentence_error_rate();
        row.subs = stats.subs;
        row.ins = stats.ins;
        row.dels = stats.dels;
        row.ref_tokens = stats.ref_tokens;
        row.mean_decoder_calls = static_cast<double>(dec_calls) / static_cast<double>(utts.size());
        row.mean_encoder_calls = static_cast<double>(enc_calls) / static_cast<double>(utts.size());
        row.mean_output_len = static_cast<double>(out_len) / static_cast<double>(utts.size());
        row.wall_rtf = audio_s > 0.0 ? wall / audio_s : 0.0;
        report.rows.push_back(row);
    }
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["model"] = model_path;
    j["dataset"] = dataset_path;
    j["config_fingerprint"] = config_fingerprint;
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows) {
        rows_j.push_back({{"model_type", r.model_type},
                          {"mode", r.mode},
                          {"iterations", r.iterations},
                          {"ter", r.ter},
                          {"ser", r.ser},
                          {"subs", r.subs},
                          {"ins", r.ins},
                          {"dels", r.dels},
                          {"ref_tokens", r.ref_tokens},
                          {"mean_decoder_calls", r.mean_decoder_calls},
                          {"mean_encoder_calls", r.mean_encoder_calls},
                          {"mean_output_len", r.mean_output_len},
                          {"wall_rtf", r.wall_rtf}});
    }
    j["rows"] = std::move(rows_j);
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("bad eval report JSON: ") + e.what());
    }
    EvalReport r;
    r.model_path = j.at("model").get<std::string>();
    r.dataset_path = j.at("dataset").get<std::string>();
    r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    for (const auto& rj : j.at("rows")) {
        EvalRow row;
        row.model_type = rj.at("model_type").get<std::string>();
        row.mode = rj.at("mode").get<std::string>();
        row.iterations = rj.at("iterations").get<std::string>();
        row.ter = rj.at("ter").get<double>();
        row.ser = rj.at("ser").get<double>();
        row.subs = rj.at("subs").get<int64_t>();
        row.ins = rj.at("ins").get<int64_t>();
        row.dels = rj.at("dels").get<int64_t>();
        row.ref_tokens = rj.at("ref_tokens").get<int64_t>();
        row.mean_decoder_calls = rj.at("mean_decoder_calls").get<double>();
        row.mean_encoder_calls = rj.at("mean_encoder_calls").get<double>();
        row.mean_output_len = rj.at("mean_output_len").get<double>();
        row.wall_rtf = rj.at("wall_rtf").get<double>();
        r.rows.push_back(row);
    }
    return r;
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    os << "model: " << model_path << "\ndataset: " << dataset_path << "\nfingerprint: " << config_fingerprint
       << "\n\n";
    char line[200];
    std::snprintf(line, sizeof(line), "%-10s %-8s %-11s %8s %8s %6s %6s %6s %10s %8s\n", "model", "mode",
                  "iterations", "TER%", "SER%", "sub", "ins", "del", "dec-calls", "RTF");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-10s %-8s %-11s %8.2f %8.2f %6lld %6lld %6lld %10.2f %8.4f\n",
                      r.model_type.c_str(), r.mode.c_str(), r.iterations.c_str(), 100.0 * r.ter, 100.0 * r.ser,
                      static_cast<long long>(r.subs), static_cast<long long>(r.ins), static_cast<long long>(r.dels),
                      r.mean_decoder_calls, r.wall_rtf);
        os << line;
    }
    return os.str();
}

bool EvalReport::same_results(const EvalReport& other) const {
    if (model_path != other.model_path || dataset_path != other.dataset_path ||
        config_fingerprint != other.config_fingerprint || rows.size() != other.rows.size())
        return false;
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& a = rows[i];
        const auto& b = other.rows[i];
        if (a.model_type != b.model_type || a.mode != b.mode || a.iterations != b.iterations || a.ter != b.ter ||
            a.ser != b.ser || a.subs != b.subs || a.ins != b.ins || a.dels != b.dels ||
            a.ref_tokens != b.ref_tokens || a.mean_decoder_calls != b.mean_decoder_calls ||
            a.mean_encoder_calls != b.mean_encoder_calls || a.mean_output_len != b.mean_output_len)
            return false;
        // wall_rtf deliberately excluded: timing is not deterministic
    }
    return true;
}

// ---------------------------------------------------------------------------
// benchmark

BenchReport run_bench(const Model& nar_model, const std::vector<Utterance>& utts, const std::string& dataset_path,
                      const std::vector<EvalMode>& modes, int repeats, const Model* ar_model, int max_ar_len) {
    if (utts.empty()) throw DataError("benchmark split is empty");
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    BenchReport report;
    report.dataset_path = dataset_path;
    report.audio_seconds = total_audio_seconds(utts);
    report.repeats = repeats;

    double ar_wall = -1.0, nar10_wall = -1.0;
    double ar_calls = -1.0, nar10_calls = -1.0;
    for (const auto& mode : modes) {
        const Model* m = &nar_model;
        if (mode.kind == "ar") {
            if (!ar_model) throw ConfigError("benchmark requested ar mode but no ar model was given");
            m = ar_model;
        }
        EvalMode run_mode = mode;
        if (mode.kind == "ar") run_mode.decode.max_ar_len = max_ar_len;
        std::vector<double> walls;
        double dec_calls = 0.0, enc_calls = 0.0;
        for (int r = 0; r < repeats; ++r) {
            auto t0 = Clock::now();
            auto results = decode_split(*m, utts, run_mode, /*threads=*/1);
            walls.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
            if (r == 0) {
                int64_t dc = 0, ec = 0;
                for (const auto& res : results) {
                    dc += res.trace.decoder_calls;
                    ec += res.trace.encoder_calls;
                }
                dec_calls = static_cast<double>(dc) / static_cast<double>(utts.size());
                enc_calls = static_cast<double>(ec) / static_cast<double>(utts.size());
            }
        }
        std::sort(walls.begin(), walls.end());
        const double median = walls[walls.size() / 2];
        BenchRow row;
        row.model_type = model_type_name(m->type);
        row.mode = mode.kind;
        row.iterations = mode.iterations_label();
        row.median_wall = median;
        row.median_rtf = report.audio_seconds > 0.0 ? median / report.audio_seconds : 0.0;
        row.mean_decoder_calls = dec_calls;
        row.mean_encoder_calls = enc_calls;
        report.rows.push_back(row);
        if (mode.kind == "ar") {
            ar_wall = median;
            ar_calls = dec_calls;
        }
        if (mode.kind == "maskctc" && !mode.decode.num_mask_mode && mode.decode.k_iters == 10) {
            nar10_wall = median;
            nar10_calls = dec_calls;
        }
    }
    if (ar_wall > 0.0 && nar10_wall > 0.0) {
        report.wall_speedup = ar_wall / nar10_wall;
        if (nar10_calls > 0.0) report.call_ratio = ar_calls / nar10_calls;
    }
    return report;
}

std::string BenchReport::to_json() const {
    nlohmann::json j;
    j["dataset"] = dataset_path;
    j["audio_seconds"] = audio_seconds;
    j["repeats"] = repeats;
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows) {
        rows_j.push_back({{"model_type", r.model_type},
                          {"mode", r.mode},
                          {"iterations", r.iterations},
                          {"median_rtf", r.median_rtf},
                          {"median_wall", r.median_wall},
                          {"mean_decoder_calls", r.mean_decoder_calls},
                          {"mean_encoder_calls", r.mean_encoder_calls}});
    }
    j["rows"] = std::move(rows_j);
    if (wall_speedup) j["wall_speedup"] = *wall_speedup;
    if (call_ratio) j["call_ratio"] = *call_ratio;
    return j.dump(2);
}

std::string BenchReport::to_table() const {
    std::ostringstream os;
    os << "dataset: " << dataset_path << "  audio: " << audio_seconds << "s  repeats: " << repeats << "\n\n";
    char line[200];
    std::snprintf(line, sizeof(line), "%-10s %-8s %-11s %10s %10s %10s\n", "model", "mode", "iterations",
                  "RTF", "wall(s)", "dec-calls");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-10s %-8s %-11s %10.4f %10.3f %10.2f\n", r.model_type.c_str(),
                      r.mode.c_str(), r.iterations.c_str(), r.median_rtf, r.median_wall, r.mean_decoder_calls);
        os << line;
    }
    if (wall_speedup) {
        std::snprintf(line, sizeof(line), "\nAR / mask-refinement(K=10) wall ratio: %.2fx", *wall_speedup);
        os << line;
        if (call_ratio) {
            std::snprintf(line, sizeof(line), "  decoder-call ratio: %.2fx", *call_ratio);
            os << line;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace maskctc
