// mclstm: generate data, train an MCL ensemble, fit the selector, evaluate.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "mcl/pipeline.hpp"

namespace {

using namespace mcl;

std::string read_text(const std::string& path) {
    const auto bytes = io::read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

RunConfig load_config(const std::string& path) { return RunConfig::parse(read_text(path), path); }

void warn_all(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "mclstm: warning: " << w << "\n";
}

std::size_t checkpoint_scalar(const std::string& path) { return inspect_checkpoint(io::read_file(path), path).scalar_size; }

template <typename F>
void with_precision(std::size_t scalar_size, F&& f) {
    if (scalar_size == sizeof(float)) {
        f(float{});
    } else if (scalar_size == sizeof(double)) {
        f(double{});
    } else {
        throw std::runtime_error("unsupported scalar size " + std::to_string(scalar_size));
    }
}

std::size_t precision_size(const std::string& p) { return p == "double" ? sizeof(double) : sizeof(float); }

struct TrainArgs {
    std::string config, data, out, resume, log;
    bool no_pretrain = false, single = false, independent = false;
    std::size_t wide = 0, threads = 1;
};

template <typename T>
void run_train(const TrainArgs& a) {
    const auto rec = load_recording(a.data);
    std::ofstream log;
    if (!a.log.empty()) {
        log.open(a.log, std::ios::app);
        if (!log) throw std::runtime_error("cannot write " + a.log);
    }
    auto on_epoch = [&](const EpochRecord& r) {
        std::cout << r.to_line() << std::endl;
        if (log) log << r.to_line() << std::endl;
    };
    Checkpoint<T> ck;
    if (!a.resume.empty()) {
        const auto from = load_checkpoint<T>(a.resume);
        const auto data = prepare_data<T>(from.config, rec);
        warn_all(data.warnings);
        ck = train_resume(from, data, a.threads, on_epoch);
    } else {
        const auto cfg = load_config(a.config);
        const auto data = prepare_data<T>(cfg, rec);
        warn_all(data.warnings);
        TrainRequest req;
        req.mode = a.single ? TrainMode::single
                   : a.wide ? TrainMode::wide
                   : a.independent ? TrainMode::independent
                   : TrainMode::mcl;
        req.wide_hidden = a.wide;
        req.pretrain = cfg.pretrain && !a.no_pretrain;
        req.threads = a.threads;
        req.on_epoch = on_epoch;
        std::cout << "train: " << data.train.size() << " windows, validation " << data.validation.size()
                  << ", test " << data.test.size() << "\n";
        ck = train_fresh(cfg, data, req);
    }
    save_checkpoint(a.out, ck);
    std::cout << "saved " << a.out << " (" << ck.kind << ", " << ck.ensemble.size() << " member"
              << (ck.ensemble.size() == 1 ? "" : "s") << ", epoch " << ck.state.epoch << ")\n";
}

template <typename T>
void run_train_classifier(const std::string& ckpt, const std::string& data_path, const std::string& out,
                          std::size_t threads) {
    auto ck = load_checkpoint<T>(ckpt);
    const auto data = prepare_data<T>(ck.config, load_recording(data_path));
    warn_all(data.warnings);
    const auto log = fit_classifier(ck, data, threads);
    std::cout << "classifier: epochs " << log.train_loss.size() << ", best validation accuracy "
              << log.best_validation_accuracy << "\n";
    save_checkpoint(out, ck);
}

template <typename T>
void run_eval(const std::string& ckpt, const std::string& data_path, const std::string& strategies,
              const std::string& report_dir, std::size_t threads) {
    const auto ck = load_checkpoint<T>(ckpt);
    const auto data = prepare_data<T>(ck.config, load_recording(data_path));
    warn_all(data.warnings);
    const auto report = evaluate_checkpoint(ck, std::span<const SequenceSample<T>>(data.test), data.max_intensity,
                                            parse_strategies(strategies), threads);
    if (!report_dir.empty()) write_report(report_dir, report);
    std::cout << report_text(report);
}

template <typename T>
void run_predict(const std::string& ckpt, const std::string& data_path, const std::string& strategy,
                 const std::string& split, const std::string& out, std::size_t threads) {
    const auto ck = load_checkpoint<T>(ckpt);
    const auto rec = load_recording(data_path);
    const auto data = prepare_data<T>(ck.config, rec);
    warn_all(data.warnings);
    const std::vector<SequenceSample<T>>* set = nullptr;
    if (split == "test") {
        set = &data.test;
    } else if (split == "validation") {
        set = &data.validation;
    } else if (split == "train") {
        set = &data.train;
    } else {
        throw std::invalid_argument("unknown split '" + split + "' (test, validation, train)");
    }
    const Strategy s = parse_strategy(strategy);
    if (s == Strategy::classifier && !ck.classifier) throw std::invalid_argument("checkpoint has no classifier");
    const std::span<const SequenceSample<T>> samples(*set);
    const bool all_layers = ck.classifier ? ck.classifier->all_layers : false;
    const auto table = evaluate_ensemble(ck.ensemble, samples, threads, all_layers);
    std::vector<std::size_t> chosen;
    if (s != Strategy::average) chosen = choose(table, s, ck.classifier ? &*ck.classifier : nullptr);

    const std::size_t n = ck.ensemble.spec().horizon, D = ck.ensemble.spec().frame_dim;
    Recording pred;
    pred.height = rec.height;
    pred.width = rec.width;
    pred.valid.assign(D, 1);
    pred.frames = Matrix<float>(samples.size() * n, D);
    pred.meta = rec.meta;
    std::ostringstream index;
    index << "window,episode,phase,start,model\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Matrix<T> frames;
        if (s == Strategy::average) {
            std::vector<const Matrix<T>*> ps;
            for (std::size_t m = 0; m < table.members; ++m) ps.push_back(&table.at(i, m).prediction);
            frames = average_prediction<T>(std::span<const Matrix<T>* const>(ps));
        } else {
            frames = table.at(i, chosen[i]).prediction;
        }
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t d = 0; d < D; ++d) pred.frames(i * n + t, d) = static_cast<float>(frames(t, d));
            pred.episode.push_back(samples[i].episode);
            pred.phase.push_back(samples[i].phase);
            pred.cluster.push_back(samples[i].cluster);
        }
        index << i << "," << samples[i].episode << "," << phase_label(samples[i].phase) << ","
              << samples[i].start + ck.ensemble.spec().input_length() << ","
              << (s == Strategy::average ? std::string("average") : std::to_string(chosen[i] + 1)) << "\n";
    }
    save_recording(out, pred);
    io::write_text(out + ".windows.csv", index.str());
    std::cout << "wrote " << samples.size() << " windows x " << n << " predicted frames to " << out << "\n";
}

void run_delay_map(const std::string& data_path, const std::string& out, std::size_t length, std::size_t stride,
                   std::size_t max_lag) {
    const auto raw = load_recording(data_path);
    const auto rec = fill_missing(raw);
    const auto windows = sliding_windows(rec, length, stride);
    warn_all(windows.warnings);
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot write " + out);
    os << "window,episode,phase,start,row,col,delay,degenerate\n";
    for (std::size_t i = 0; i < windows.samples.size(); ++i) {
        const auto& w = windows.samples[i];
        const auto map = delay_map(w.frames, rec.height, rec.width, raw.valid, max_lag);
        for (std::size_t r = 0; r < rec.height; ++r) {
            for (std::size_t c = 0; c < rec.width; ++c) {
                const std::size_t ch = r * rec.width + c;
                os << i << "," << w.episode << "," << phase_label(w.phase) << "," << w.start << "," << r << "," << c
                   << "," << map.delay[ch] << "," << int(map.degenerate[ch]) << "\n";
            }
        }
    }
    if (!os) throw std::runtime_error("write failed: " + out);
    std::cout << "wrote delay maps for " << windows.samples.size() << " windows to " << out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multiple choice learning for LSTM sequence prediction"};
    app.require_subcommand(1);

    std::string config, data, out, ckpt, strategies = "oracle,recon,classifier,average", report, strategy = "recon",
                                            split = "test";
    std::size_t threads = 1;
    TrainArgs ta;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-cluster recording");
    gen->add_option("--config", config, "Run configuration file")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", out, "Recording file to write")->required();

    auto* train = app.add_subcommand("train", "Train an ensemble (or a baseline) and write a checkpoint");
    train->add_option("--config", ta.config, "Run configuration file")->check(CLI::ExistingFile);
    train->add_option("--data", ta.data, "Recording file")->required()->check(CLI::ExistingFile);
    train->add_option("--out", ta.out, "Checkpoint to write")->required();
    train->add_flag("--no-pretrain", ta.no_pretrain, "Skip diversity pretraining");
    auto* single = train->add_flag("--single", ta.single, "Train one model of the member width");
    auto* wide = train->add_option("--wide", ta.wide, "Train one model with this many hidden units per layer")
                     ->excludes(single)
                     ->check(CLI::PositiveNumber);
    train->add_flag("--independent", ta.independent, "Train every member alone on all windows (averaging baseline)")
        ->excludes(single)
        ->excludes(wide);
    train->add_option("--resume", ta.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
    train->add_option("--log", ta.log, "Append per-epoch lines to this file");
    train->add_option("--threads", ta.threads, "Worker threads")->check(CLI::PositiveNumber);

    auto* tc = app.add_subcommand("train-classifier", "Fit the selection classifier on a trained ensemble");
    tc->add_option("--ckpt", ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
    tc->add_option("--data", data, "Recording file")->required()->check(CLI::ExistingFile);
    tc->add_option("--out", out, "Checkpoint to write")->required();
    tc->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    auto* ev = app.add_subcommand("eval", "Score selection strategies on the test episode");
    ev->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", data, "Recording file")->required()->check(CLI::ExistingFile);
    ev->add_option("--strategies", strategies, "Comma list of oracle, recon, classifier, average")
        ->capture_default_str();
    ev->add_option("--report", report, "Directory for report.txt and CSV files");
    ev->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    auto* pr = app.add_subcommand("predict", "Write predicted frames as a recording");
    pr->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    pr->add_option("--data", data, "Recording file")->required()->check(CLI::ExistingFile);
    pr->add_option("--strategy", strategy, "oracle, recon, classifier or average")->capture_default_str();
    pr->add_option("--split", split, "test, validation or train")->capture_default_str();
    pr->add_option("--out", out, "Recording file to write")->required();
    pr->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    std::size_t dm_length = 20, dm_stride = 20, dm_lag = 3;
    auto* dm = app.add_subcommand("delay-map", "Per-window channel delay maps as CSV");
    dm->add_option("--data", data, "Recording file")->required()->check(CLI::ExistingFile);
    dm->add_option("--out", out, "CSV file to write")->required();
    dm->add_option("--length", dm_length, "Window length")->capture_default_str()->check(CLI::PositiveNumber);
    dm->add_option("--stride", dm_stride, "Window stride")->capture_default_str()->check(CLI::PositiveNumber);
    dm->add_option("--max-lag", dm_lag, "Largest lag in frames")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "mclstm: error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*gen) {
            const auto cfg = load_config(config);
            const auto rec = generate_synthetic(cfg.generator);
            save_recording(out, rec);
            std::cout << "wrote " << rec.length() << " frames (" << rec.episode_count() << " episodes) to " << out
                      << "\n";
        } else if (*train) {
            if (ta.resume.empty() && ta.config.empty()) throw std::invalid_argument("train needs --config or --resume");
            if (!ta.resume.empty() && (ta.single || ta.wide || ta.independent || ta.no_pretrain || !ta.config.empty())) {
                throw std::invalid_argument("--resume takes its settings from the checkpoint");
            }
            const std::size_t size =
                ta.resume.empty() ? precision_size(load_config(ta.config).precision) : checkpoint_scalar(ta.resume);
            with_precision(size, [&](auto tag) { run_train<decltype(tag)>(ta); });
        } else if (*tc) {
            with_precision(checkpoint_scalar(ckpt),
                           [&](auto tag) { run_train_classifier<decltype(tag)>(ckpt, data, out, threads); });
        } else if (*ev) {
            with_precision(checkpoint_scalar(ckpt),
                           [&](auto tag) { run_eval<decltype(tag)>(ckpt, data, strategies, report, threads); });
        } else if (*pr) {
            with_precision(checkpoint_scalar(ckpt),
                           [&](auto tag) { run_predict<decltype(tag)>(ckpt, data, strategy, split, out, threads); });
        } else if (*dm) {
            run_delay_map(data, out, dm_length, dm_stride, dm_lag);
        }
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& c : msg)
            if (c == '\n') c = ' ';
        std::cerr << "mclstm: error: " << msg << "\n";
        return 1;
    }
    return 0;
}
