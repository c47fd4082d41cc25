#pragma once

// Run configuration: one key = value per line, unknown keys rejected.
// `pattern = <kind> key=value ...` may repeat, once per cluster.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/data.hpp"
#include "mcl/keyvalue.hpp"
#include "mcl/mcl_train.hpp"
#include "mcl/selection.hpp"

namespace mcl {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Four clusters matching the desk-scale defaults (12 x 12 grid): an upward
/// plane wave, a clockwise spiral, a local burst and a refractory decay.
inline std::vector<PatternSpec> default_patterns() {
    std::vector<PatternSpec> p(4);
    p[0].kind = PatternKind::plane_wave;
    p[0].direction_x = 0.0;
    p[0].direction_y = -1.0;
    p[0].wavelength = 12.0;
    p[0].speed = 0.5;
    p[1].kind = PatternKind::spiral;
    p[1].angular_velocity = -0.25;
    p[1].pitch = 0.6;
    p[2].kind = PatternKind::local_burst;
    p[2].center_x = 3.0;
    p[2].center_y = 8.0;
    p[2].scale = 1.8;
    p[2].frequency = 0.08;
    p[3].kind = PatternKind::refractory_decay;
    p[3].center_x = 7.0;
    p[3].center_y = 4.0;
    p[3].scale = 4.0;
    p[3].period = 16.0;
    p[3].decay = 3.0;
    const double base[4] = {0.4, 0.3, 0.2, 0.1};
    const double event[4] = {0.1, 0.2, 0.3, 0.4};
    for (std::size_t k = 0; k < 4; ++k) {
        p[k].noise = 0.05;
        p[k].baseline_weight = base[k];
        p[k].event_weight = event[k];
    }
    return p;
}

struct RunConfig {
    RunConfig() { generator.patterns = default_patterns(); }

    GeneratorConfig generator;

    std::size_t window_length = 20;
    std::size_t horizon = 10;
    std::size_t stride = 1;
    std::uint32_t test_episode = 0;        // 0: last episode
    std::uint32_t validation_episode = 0;  // 0: second to last

    std::size_t members = 4;
    std::size_t hidden = 64;
    std::size_t layers = 2;
    bool peepholes = true;
    bool reverse_reconstruction = true;
    double init_scale = 0.08;
    double forget_bias = 1.0;

    OptimizerConfig optimizer;
    double dropout = 0.0;
    std::size_t max_epochs = 50;
    std::size_t patience = 3;
    bool pretrain = true;
    std::uint64_t seed = 1;
    std::string precision = "float";

    ClassifierConfig classifier;

    std::uint32_t resolved_test_episode() const {
        return test_episode ? test_episode : static_cast<std::uint32_t>(generator.episodes);
    }
    std::uint32_t resolved_validation_episode() const {
        return validation_episode ? validation_episode : static_cast<std::uint32_t>(generator.episodes - 1);
    }

    SequenceSpec sequence_spec() const {
        return SequenceSpec{window_length, horizon, generator.height * generator.width};
    }
    ModelConfig model_config() const { return ModelConfig{hidden, layers, peepholes, reverse_reconstruction}; }

    TrainOptions train_options(std::size_t threads) const {
        TrainOptions o;
        o.max_epochs = max_epochs;
        o.patience = patience;
        o.threads = threads;
        o.dropout = DropoutSpec{dropout, true};
        o.seed = seed;
        return o;
    }

    void validate() const {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigError("invalid config: " + what);
        };
        try {
            generator.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("invalid config: ") + e.what());
        }
        need(horizon >= 1 && horizon < window_length, "need 1 <= horizon < window_length");
        need(stride >= 1, "stride must be >= 1");
        need(generator.episodes >= 3 || (test_episode && validation_episode),
             "need at least 3 episodes for train/validation/test splits");
        need(resolved_test_episode() != resolved_validation_episode(), "test and validation episode must differ");
        need(resolved_test_episode() <= generator.episodes && resolved_validation_episode() <= generator.episodes &&
                 resolved_validation_episode() >= 1,
             "split episode ids must be in 1..episodes");
        need(members >= 1, "members must be >= 1");
        need(hidden >= 1 && layers >= 1, "hidden and layers must be >= 1");
        need(init_scale > 0.0, "init_scale must be > 0");
        try {
            optimizer.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("invalid config: ") + e.what());
        }
        need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
        need(max_epochs >= 1, "max_epochs must be >= 1");
        need(precision == "float" || precision == "double", "precision must be float or double");
        need(classifier.hidden1 >= 1 && classifier.hidden2 >= 1, "classifier widths must be >= 1");
        need(classifier.learning_rate > 0.0, "classifier_learning_rate must be > 0");
        need(classifier.momentum >= 0.0 && classifier.momentum < 1.0, "classifier_momentum must be in [0, 1)");
        need(classifier.batch_size >= 2, "classifier_batch_size must be >= 2");
        need(classifier.max_epochs >= 1, "classifier_max_epochs must be >= 1");
    }

    /// Canonical text: every key, fixed order, round-trips through parse().
    std::string to_text() const {
        std::ostringstream os;
        auto self = const_cast<RunConfig*>(this);
        for (const auto& f : self->fields()) os << f.key << " = " << f.get() << "\n";
        for (const auto& p : generator.patterns) os << "pattern = " << p.to_text() << "\n";
        return os.str();
    }

    static RunConfig parse(std::string_view text, const std::string& origin = "config") {
        RunConfig c;
        bool own_patterns = false;
        auto fields = c.fields();
        for (const auto& e : kv::parse(text, origin)) {
            const std::string where = origin + ":" + std::to_string(e.line);
            try {
                if (e.key == "pattern") {
                    if (!own_patterns) c.generator.patterns.clear();
                    own_patterns = true;
                    c.generator.patterns.push_back(PatternSpec::from_text(e.value));
                    continue;
                }
                auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) { return f.key == e.key; });
                if (it == fields.end()) throw ConfigError("unknown key '" + e.key + "'");
                it->set(e.value);
            } catch (const std::exception& ex) {
                throw ConfigError(where + ": " + ex.what());
            }
        }
        c.validate();
        return c;
    }

private:
    struct Field {
        std::string key;
        std::function<std::string()> get;
        std::function<void(const std::string&)> set;
    };

    std::vector<Field> fields() {
        std::vector<Field> f;
        auto size = [&](const char* k, std::size_t& v) {
            f.push_back({k, [&v] { return std::to_string(v); },
                         [&v, k](const std::string& s) { v = static_cast<std::size_t>(kv::to_u64(s, k)); }});
        };
        auto u32 = [&](const char* k, std::uint32_t& v) {
            f.push_back({k, [&v] { return std::to_string(v); }, [&v, k](const std::string& s) {
                             const auto x = kv::to_u64(s, k);
                             if (x > 0xffffffffu) throw ConfigError(std::string(k) + ": out of range");
                             v = static_cast<std::uint32_t>(x);
                         }});
        };
        auto u64 = [&](const char* k, std::uint64_t& v) {
            f.push_back({k, [&v] { return std::to_string(v); }, [&v, k](const std::string& s) { v = kv::to_u64(s, k); }});
        };
        auto real = [&](const char* k, double& v) {
            f.push_back({k, [&v] { return kv::format_double(v); },
                         [&v, k](const std::string& s) { v = kv::to_double(s, k); }});
        };
        auto flag = [&](const char* k, bool& v) {
            f.push_back({k, [&v] { return std::string(v ? "true" : "false"); },
                         [&v, k](const std::string& s) { v = kv::to_bool(s, k); }});
        };
        auto text = [&](const char* k, std::string& v) {
            f.push_back({k, [&v] { return v; }, [&v](const std::string& s) { v = s; }});
        };
        size("height", generator.height);
        size("width", generator.width);
        size("episodes", generator.episodes);
        size("baseline_frames", generator.baseline_frames);
        size("event_frames", generator.event_frames);
        size("bout_min", generator.bout_min);
        size("bout_max", generator.bout_max);
        size("bout_ramp", generator.bout_ramp);
        size("dead_channels", generator.dead_channels);
        real("sampling_rate", generator.sampling_rate);
        u64("data_seed", generator.seed);
        size("window_length", window_length);
        size("horizon", horizon);
        size("stride", stride);
        u32("test_episode", test_episode);
        u32("validation_episode", validation_episode);
        size("members", members);
        size("hidden", hidden);
        size("layers", layers);
        flag("peepholes", peepholes);
        flag("reverse_reconstruction", reverse_reconstruction);
        real("init_scale", init_scale);
        real("forget_bias", forget_bias);
        real("learning_rate", optimizer.learning_rate);
        real("momentum", optimizer.momentum);
        real("clip_norm", optimizer.clip_norm);
        size("batch_size", optimizer.batch_size);
        flag("freeze_idle_velocity", optimizer.freeze_idle_velocity);
        flag("sum_squared_error", optimizer.sum_squared_error);
        real("dropout", dropout);
        size("max_epochs", max_epochs);
        size("patience", patience);
        flag("pretrain", pretrain);
        u64("seed", seed);
        text("precision", precision);
        size("classifier_hidden1", classifier.hidden1);
        size("classifier_hidden2", classifier.hidden2);
        real("classifier_learning_rate", classifier.learning_rate);
        real("classifier_momentum", classifier.momentum);
        size("classifier_batch_size", classifier.batch_size);
        size("classifier_max_epochs", classifier.max_epochs);
        size("classifier_patience", classifier.patience);
        flag("classifier_all_layers", classifier.all_layers);
        return f;
    }
};

}  // namespace mcl
