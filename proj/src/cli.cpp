#include "pstyle/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "pstyle/config.hpp"
#include "pstyle/depth_eval.hpp"
#include "pstyle/errors.hpp"
#include "pstyle/imaging.hpp"
#include "pstyle/stylizer.hpp"
#include "pstyle/training.hpp"

namespace pstyle {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCacheEnv = "PALETTE_STYLER_CACHE";
constexpr const char* kDefaultWeightsName = "vgg19_relu4_1.pstc";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Merged view of config-file values and explicit flags, keyed by flag name
// with dashes turned into underscores.
class Settings {
public:
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string text(const std::string& key, const std::string& fallback = {}) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string required(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end() || it->second.empty()) {
            std::string flag = key;
            for (auto& ch : flag) {
                if (ch == '_') ch = '-';
            }
            throw UsageError("missing required --" + flag);
        }
        return it->second;
    }

    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> out;
        std::istringstream in(text(key));
        std::string item;
        while (std::getline(in, item, ',')) {
            const auto b = item.find_first_not_of(" \t");
            if (b == std::string::npos) continue;
            out.push_back(item.substr(b, item.find_last_not_of(" \t") - b + 1));
        }
        return out;
    }

    template <typename N>
    N number(const std::string& key, N fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::istringstream in(it->second);
        N v{};
        in >> v;
        if (in.fail() || !(in >> std::ws).eof()) {
            throw RangeError("invalid value '" + it->second + "' for '" + key + "'");
        }
        return v;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

struct Flag {
    const char* name;     // long flag without dashes
    const char* help;
    const char* default_text;
    bool repeatable = false;
    bool is_switch = false;
};

std::string key_of(const std::string& flag) {
    std::string key = flag;
    for (auto& ch : key) {
        if (ch == '-') ch = '_';
    }
    return key;
}

// Storage for one subcommand's raw flag values.
struct Bound {
    CLI::App* app = nullptr;
    std::vector<std::pair<std::string, CLI::Option*>> options;
    std::map<std::string, std::string> scalars;
    std::map<std::string, std::vector<std::string>> lists;
    std::map<std::string, bool> switches;
};

void bind_flags(Bound& b, const std::vector<Flag>& flags) {
    for (const auto& f : flags) {
        const std::string name = std::string("--") + f.name;
        const std::string key = key_of(f.name);
        CLI::Option* opt = nullptr;
        if (f.is_switch) {
            opt = b.app->add_flag(name, b.switches[key], f.help);
        } else if (f.repeatable) {
            opt = b.app->add_option(name, b.lists[key], f.help)->allow_extra_args(false);
            opt->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        } else {
            opt = b.app->add_option(name, b.scalars[key], f.help);
        }
        if (f.default_text && *f.default_text) opt->default_str(f.default_text);
        b.options.emplace_back(key, opt);
    }
}

std::set<std::string> config_keys() {
    std::set<std::string> keys = {"content", "style", "out", "weights_vgg", "checkpoint", "k", "patch_size",
                                  "num_patches", "palette_mode", "w", "masks", "select", "seed", "content_dir",
                                  "style_dir", "iters", "lr", "batch", "lambda_c", "lambda_s", "checkpoint_every",
                                  "manifest", "export_palette", "minmax_normalize", "input_size", "crop"};
    for (const auto& [key, _] : TrainConfig{}.to_map()) keys.insert(key);
    return keys;
}

Settings merge(const Bound& b) {
    Settings s;
    auto it = b.scalars.find("config");
    const CLI::Option* config_opt = nullptr;
    for (const auto& [key, opt] : b.options) {
        if (key == "config") config_opt = opt;
    }
    if (config_opt && config_opt->count() > 0) {
        const auto keys = config_keys();
        for (const auto& [key, value] : load_config(it->second)) {
            if (!keys.count(key)) throw FormatError("unknown config key '" + key + "'");
            s.set(key, value);
        }
    }
    for (const auto& [key, opt] : b.options) {
        if (key == "config" || opt->count() == 0) continue;
        if (auto sw = b.switches.find(key); sw != b.switches.end()) {
            s.set(key, sw->second ? "true" : "false");
        } else if (auto l = b.lists.find(key); l != b.lists.end()) {
            std::string joined;
            for (const auto& v : l->second) joined += (joined.empty() ? "" : ",") + v;
            s.set(key, joined);
        } else {
            s.set(key, b.scalars.at(key));
        }
    }
    return s;
}

bool truthy(const std::string& v) { return v == "1" || v == "true" || v == "yes" || v == "on"; }

fs::path resolve_weights(const Settings& s) {
    const char* cache = std::getenv(kCacheEnv);
    if (s.has("weights_vgg")) {
        const fs::path p = s.text("weights_vgg");
        if (!fs::exists(p) && cache && p.is_relative() && fs::exists(fs::path(cache) / p)) return fs::path(cache) / p;
        return p;
    }
    if (cache && *cache) return fs::path(cache) / kDefaultWeightsName;
    throw UsageError(std::string("missing required --weights-vgg (or set ") + kCacheEnv + ")");
}

StyleConfig style_config(const Settings& s) {
    StyleConfig cfg;
    cfg.k = s.number("k", cfg.k);
    cfg.patch_size = s.number("patch_size", cfg.patch_size);
    cfg.num_patches = s.number("num_patches", cfg.num_patches);
    if (s.has("palette_mode")) cfg.mode = parse_palette_mode(s.text("palette_mode"));
    if (cfg.k <= 0 || cfg.patch_size <= 0 || cfg.num_patches <= 0) {
        throw RangeError("k, patch-size and num-patches must be positive");
    }
    cfg.palette();  // rejects k > num_patches before any file is touched
    return cfg;
}

StyleModel load_model(const Settings& s) {
    const fs::path checkpoint = s.required("checkpoint");
    const fs::path weights = resolve_weights(s);
    Checkpoint ckpt = load_checkpoint(checkpoint);
    return {load_encoder(weights), std::move(ckpt.params.ac), std::move(ckpt.params.decoder)};
}

std::vector<ImageTensor> load_styles(const Settings& s, std::size_t min_count, std::optional<std::size_t> exact) {
    const auto paths = s.list("style");
    if (exact && paths.size() != *exact) {
        throw UsageError("expected exactly " + std::to_string(*exact) + " --style, got " +
                         std::to_string(paths.size()));
    }
    if (paths.size() < min_count) throw UsageError("expected at least " + std::to_string(min_count) + " --style");
    std::vector<ImageTensor> out;
    for (const auto& p : paths) out.push_back(load_image(p));
    return out;
}

int cmd_stylize(const Settings& s, std::ostream& out) {
    const StyleConfig cfg = style_config(s);
    const std::uint64_t seed = s.number<std::uint64_t>("seed", 0);
    const fs::path out_path = s.required("out");
    const ImageTensor content = load_image(s.required("content"));
    const auto styles = load_styles(s, 1, 1);
    const StyleModel model = load_model(s);
    save_image(stylize(content, styles[0], model, cfg, seed), out_path);
    if (s.has("export_palette")) save_palette(style_palette(styles[0], model, cfg, seed), s.text("export_palette"));
    out << "wrote " << out_path.string() << '\n';
    return kExitOk;
}

int cmd_stylize_multi(const Settings& s, std::ostream& out) {
    const StyleConfig cfg = style_config(s);
    const std::uint64_t seed = s.number<std::uint64_t>("seed", 0);
    const fs::path out_path = s.required("out");
    std::optional<std::vector<std::size_t>> selections;
    if (s.has("select")) {
        selections.emplace();
        for (const auto& item : s.list("select")) {
            Settings one;
            one.set("select", item);
            const long v = one.number<long>("select", 0);
            if (v < 0) throw IndexError("negative palette selection " + item);
            selections->push_back(static_cast<std::size_t>(v));
        }
    }
    const ImageTensor content = load_image(s.required("content"));
    const auto styles = load_styles(s, 1, std::nullopt);
    const StyleModel model = load_model(s);
    save_image(stylize_multi(content, styles, model, cfg, selections, seed), out_path);
    out << "wrote " << out_path.string() << '\n';
    return kExitOk;
}

int cmd_interpolate(const Settings& s, std::ostream& out) {
    const StyleConfig cfg = style_config(s);
    const std::uint64_t seed = s.number<std::uint64_t>("seed", 0);
    const double w = s.number<double>("w", 0.5);
    if (!(w >= 0.0 && w <= 1.0)) throw RangeError("--w must lie in [0,1]");
    const fs::path out_path = s.required("out");
    const ImageTensor content = load_image(s.required("content"));
    const auto styles = load_styles(s, 2, 2);
    const StyleModel model = load_model(s);
    save_image(interpolate_styles(content, styles[0], styles[1], w, model, cfg, seed), out_path);
    out << "wrote " << out_path.string() << '\n';
    return kExitOk;
}

int cmd_spatial(const Settings& s, std::ostream& out) {
    const StyleConfig cfg = style_config(s);
    const std::uint64_t seed = s.number<std::uint64_t>("seed", 0);
    const fs::path out_path = s.required("out");
    const ImageTensor content = load_image(s.required("content"));
    const auto styles = load_styles(s, 1, std::nullopt);
    const auto mask_paths = s.list("masks");
    if (mask_paths.size() != styles.size()) {
        throw UsageError("expected one --masks per --style (" + std::to_string(styles.size()) + "), got " +
                         std::to_string(mask_paths.size()));
    }
    std::vector<Mask> masks;
    for (const auto& p : mask_paths) masks.push_back(load_mask(p));
    const StyleModel model = load_model(s);
    save_image(spatial_control(content, styles, masks, model, cfg, seed), out_path);
    out << "wrote " << out_path.string() << '\n';
    return kExitOk;
}

int cmd_train(const Settings& s, std::ostream& out) {
    TrainConfig cfg;
    std::map<std::string, std::string> overrides;
    const auto train_keys = TrainConfig{}.to_map();
    for (const auto& [key, value] : s.values()) {
        if (train_keys.count(key)) overrides[key] = value;
    }
    if (s.has("k")) overrides["cluster_k"] = s.text("k");
    if (s.has("iters")) overrides["total_iters"] = s.text("iters");
    cfg.apply(overrides);
    cfg.validate();
    const fs::path content_dir = s.required("content_dir");
    const fs::path style_dir = s.required("style_dir");
    const fs::path out_dir = s.required("out");
    const EncoderParams encoder = load_encoder(resolve_weights(s));
    const TrainResult result = train(content_dir, style_dir, encoder, cfg, out_dir);
    out << "trained " << cfg.total_iters << " iterations (" << result.skipped_steps << " skipped); checkpoint "
        << result.final_checkpoint.string() << '\n';
    return kExitOk;
}

int cmd_eval_depth(const Settings& s, std::ostream& out) {
    const fs::path manifest = s.required("manifest");
    const bool minmax = s.has("minmax_normalize") && truthy(s.text("minmax_normalize"));
    const EvalReport report = evaluate_corpus(load_manifest(manifest), minmax);
    if (s.has("out")) write_report_csv(report, s.text("out"));
    out << report_summary(report) << '\n';
    return kExitOk;
}

const Flag kConfigFlag{"config", "key = value file; explicit flags override its values", ""};
const Flag kSeedFlag{"seed", "seed shared by every random generator", "0"};
const Flag kWeightsFlag{"weights-vgg", "encoder weight container (falls back to $PALETTE_STYLER_CACHE)", ""};
const Flag kCheckpointFlag{"checkpoint", "trained attention/decoder checkpoint", ""};

std::vector<Flag> inference_flags(bool multi_style) {
    return {
        {"content", "content image", ""},
        {"style", multi_style ? "style image (repeatable)" : "style image", "", true},
        {"out", "output image path", ""},
        kWeightsFlag,
        kCheckpointFlag,
        {"k", "palette size", "3"},
        {"patch-size", "palette patch size in relu4_1 cells", "8"},
        {"num-patches", "patches sampled per style", "100"},
        {"palette-mode", "centroid|nearest", "centroid"},
        kSeedFlag,
        kConfigFlag,
    };
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Palette-based neural style transfer", "palette-styler"};
    app.require_subcommand(1);
    app.fallthrough(false);

    struct Command {
        Bound bound;
        int (*run)(const Settings&, std::ostream&);
    };
    std::vector<std::unique_ptr<Command>> commands;
    auto add = [&](const char* name, const char* help, std::vector<Flag> flags,
                   int (*run)(const Settings&, std::ostream&)) {
        auto cmd = std::make_unique<Command>();
        cmd->bound.app = app.add_subcommand(name, help);
        cmd->run = run;
        bind_flags(cmd->bound, flags);
        commands.push_back(std::move(cmd));
    };

    add("train", "train the attention block and decoder",
        {
            {"content-dir", "directory of content images", ""},
            {"style-dir", "directory of style images", ""},
            {"out", "output directory for checkpoints and loss_log.csv", ""},
            kWeightsFlag,
            {"iters", "training iterations", "50000"},
            {"lr", "Adam learning rate", "0.0001"},
            {"batch", "batch size", "4"},
            {"lambda-c", "content loss weight", "30"},
            {"lambda-s", "style loss weight", "1"},
            {"checkpoint-every", "iterations between checkpoints (0 disables)", "5000"},
            {"k", "palette size", "3"},
            {"patch-size", "palette patch size in relu4_1 cells", "8"},
            {"num-patches", "patches sampled per style", "20"},
            {"palette-mode", "centroid|nearest", "centroid"},
            {"input-size", "short side after resizing", "512"},
            {"crop", "random crop size", "256"},
            kSeedFlag,
            kConfigFlag,
        },
        cmd_train);
    {
        auto flags = inference_flags(false);
        flags.push_back({"export-palette", "also write the style palette to this container path", ""});
        add("stylize", "stylize one content image with one style", flags, cmd_stylize);
    }
    {
        auto flags = inference_flags(true);
        flags.push_back({"select", "comma-separated palette entry per style (default: seeded random)", ""});
        add("stylize-multi", "one palette entry from each of several styles", flags, cmd_stylize_multi);
    }
    {
        auto flags = inference_flags(true);
        flags.push_back({"w", "weight of the second style", "0.5"});
        add("interpolate", "blend two styles in feature space", flags, cmd_interpolate);
    }
    {
        auto flags = inference_flags(true);
        flags.push_back({"masks", "binary mask per style (repeatable, same order)", "", true});
        add("spatial", "apply styles to masked regions", flags, cmd_spatial);
    }
    add("eval-depth", "MAE/RMSE between content and stylized depth maps",
        {
            {"manifest", "CSV pair_id,content_depth_path,stylized_depth_path", ""},
            {"out", "per-pair CSV report", ""},
            {"minmax-normalize", "rescale each map to [0,1] first", "false", false, true},
            kConfigFlag,
        },
        cmd_eval_depth);

    std::vector<std::string> argv_store;
    argv_store.reserve(args.size() + 1);
    argv_store.push_back("palette-styler");
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    for (const auto& cmd : commands) {
        if (!cmd->bound.app->parsed()) continue;
        try {
            return cmd->run(merge(cmd->bound), out);
        } catch (const UsageError& e) {
            err << "usage error: " << e.what() << "\n" << cmd->bound.app->help();
            return kExitUsage;
        } catch (const std::exception& e) {
            err << "error: " << e.what() << '\n';
            return kExitRuntime;
        }
    }
    err << app.help();
    return kExitUsage;
}

}  // namespace pstyle
