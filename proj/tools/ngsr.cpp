// ngsr: cost analysis, inference, evaluation, degradation, self-test and micro-fit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ngsr/analysis.hpp"
#include "ngsr/image.hpp"
#include "ngsr/metrics.hpp"
#include "ngsr/microfit.hpp"
#include "ngsr/model.hpp"
#include "ngsr/parallel.hpp"
#include "ngsr/testing/selftest.hpp"
#include "ngsr/weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ngsr;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kDataError = 3;

/// Error that maps straight to an exit code.
struct Exit {
    int code;
    std::string message;
};

json manifest(const std::string& sub, const json& fields) {
    json m = {{"subcommand", sub}, {"tool", "ngsr"}, {"threads", thread_budget()}};
    for (const auto& [k, v] : fields.items()) m[k] = v;
    return m;
}

void emit(const json& report, const std::string& path) {
    const std::string text = report.dump(2) + "\n";
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(path);
    if (!f) throw Exit{kDataError, "cannot write report '" + path + "'"};
    f << text;
}

/// JSON has no infinity; identical images report the string "inf".
json db_value(double v) { return std::isinf(v) ? json("inf") : json(v); }

std::pair<int64_t, int64_t> parse_size(const std::string& s) {
    static const std::regex re(R"((\d+)[xX](\d+))");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw Exit{kUsage, "size must look like 1280x720, got '" + s + "'"};
    const int64_t w = std::stoll(m[1]), h = std::stoll(m[2]);
    if (w < 1 || h < 1 || w > 1'000'000 || h > 1'000'000) throw Exit{kUsage, "size out of range: " + s};
    return {w, h};
}

AttentionMode parse_mode(const std::string& s) {
    if (s == "cosine") return AttentionMode::Cosine;
    if (s == "dot" || s == "dot-product") return AttentionMode::DotProduct;
    throw Exit{kUsage, "attention must be cosine or dot-product"};
}

template <typename F>
double timed(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ImageBuffer load_image(const std::string& path, int code_on_error) {
    try {
        return read_png(path);
    } catch (const ImageError& e) {
        throw Exit{code_on_error, e.what()};
    }
}

WeightStore obtain_weights(const std::string& path, const ModelConfig& cfg, uint64_t seed) {
    if (path.empty()) return init_weights(cfg, seed);
    try {
        WeightStore w = load_weights(path);
        check_complete(w, cfg);
        return w;
    } catch (const WeightError& e) {
        throw Exit{kDataError, std::string(e.what())};
    }
}

NormStats obtain_stats(const std::string& path) {
    if (path.empty()) return NormStats::neutral();
    try {
        return NormStats::load(path);
    } catch (const ImageError& e) {
        throw Exit{kDataError, e.what()};
    }
}

void write_tensor_raw(const Tensor& t, const fs::path& file) {
    std::ofstream f(file, std::ios::binary);
    if (!f) throw Exit{kDataError, "cannot write '" + file.string() + "'"};
    f.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    int64_t scale = 2;
    std::string hr = "1280x720";
    std::string format = "json";
    std::string output;
    std::string attention = "cosine";
    bool check = false;
};

int cmd_analyze(const AnalyzeArgs& a) {
    const auto [w, h] = parse_size(a.hr);
    ModelConfig cfg = ModelConfig::standard(a.scale);
    cfg.mode = parse_mode(a.attention);
    CostReport rep;
    const double secs = timed([&] { rep = analyze_cost(cfg, w, h); });
    std::fprintf(stderr, "analyze: %.3f ms\n", secs * 1e3);
    const CostCheck chk = check_against_target(rep);
    if (a.format == "text") {
        std::ostringstream os;
        for (const auto& l : rep.layers) os << l.path << "\t" << l.params << "\t" << l.mult_adds << "\n";
        os << "total_params\t" << rep.total_params << "\n";
        os << "total_mult_adds\t" << rep.total_mult_adds << " (" << static_cast<double>(rep.total_mult_adds) / 1e9
           << "G)\n";
        if (chk.applicable)
            os << "residual\tparams " << chk.param_residual << " (" << chk.param_rel * 100 << "%), mult_adds "
               << chk.mult_adds_residual_g << "G (" << chk.mult_adds_rel * 100 << "%)\n";
        if (a.output.empty()) std::cout << os.str();
        else {
            std::ofstream f(a.output);
            if (!f) throw Exit{kDataError, "cannot write '" + a.output + "'"};
            f << os.str();
        }
    } else {
        json j = to_json_value(rep);
        j["manifest"] = manifest("analyze", {{"config", to_json_value(cfg)}, {"hr_size", a.hr}, {"report", a.output}});
        emit(j, a.output);
    }
    if (a.check) {
        if (!chk.applicable) throw Exit{kUsage, "--check needs the default network at 1280x720"};
        std::fprintf(stderr, "check: params %s (%+.4f%%), mult-adds %s (%+.4f%%)\n", chk.params_ok ? "ok" : "FAIL",
                     chk.param_rel * 100, chk.mult_adds_ok ? "ok" : "FAIL", chk.mult_adds_rel * 100);
        return chk.ok() ? kOk : kCheckFailed;
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct InferArgs {
    std::string weights, input, output, stats, dump, report, attention = "cosine";
    int64_t scale = 2;
    uint64_t seed = 0;
};

int cmd_infer(const InferArgs& a) {
    ModelConfig cfg = ModelConfig::standard(a.scale);
    cfg.mode = parse_mode(a.attention);
    const ImageBuffer lr = load_image(a.input, kUsage);
    const NormStats stats = obtain_stats(a.stats);
    const WeightStore w = obtain_weights(a.weights, cfg, a.seed);
    const NgswinModel model(cfg, w);
    ForwardTrace trace;
    ImageBuffer sr;
    const double secs = timed([&] { sr = model.forward(lr, stats, a.dump.empty() ? nullptr : &trace); });
    try {
        write_png(sr, a.output);
    } catch (const ImageError& e) {
        throw Exit{kDataError, e.what()};
    }
    std::fprintf(stderr, "infer: %lldx%lld -> %lldx%lld in %.3f s\n", static_cast<long long>(lr.width),
                 static_cast<long long>(lr.height), static_cast<long long>(sr.width), static_cast<long long>(sr.height),
                 secs);
    json j = {{"output", a.output}, {"lr_size", {lr.width, lr.height}}, {"sr_size", {sr.width, sr.height}}};
    if (!a.dump.empty()) {
        fs::create_directories(a.dump);
        json index = json::object();
        auto put = [&](const std::string& name, const Tensor& t) {
            write_tensor_raw(t, fs::path(a.dump) / (name + ".f32"));
            index[name] = {{"file", name + ".f32"}, {"shape", t.shape()}, {"layout", "hwc"}, {"dtype", "float32-le"}};
        };
        put("z_s", trace.z_s);
        for (size_t i = 0; i < 3; ++i) {
            put("stage" + std::to_string(i + 1) + "_input", trace.stage_input[i]);
            put("z_enc" + std::to_string(i + 1), trace.z_enc[i]);
        }
        put("z_scdp", trace.z_scdp);
        put("z_dec", trace.z_dec);
        std::ofstream f(fs::path(a.dump) / "index.json");
        f << index.dump(2) << "\n";
        j["features"] = a.dump;
    }
    j["manifest"] = manifest("infer", {{"config", to_json_value(cfg)},
                                       {"input", a.input},
                                       {"output", a.output},
                                       {"weights", a.weights.empty() ? json(nullptr) : json(a.weights)},
                                       {"seed", a.seed},
                                       {"stats", stats.to_json()},
                                       {"report", a.report}});
    emit(j, a.report);
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string hr_dir, lr_dir, weights, stats, report, method = "bicubic", attention = "cosine";
    int64_t scale = 2;
    int64_t crop = -1;
    int workers = 0;
    uint64_t seed = 0;
};

std::map<std::string, fs::path> png_files(const std::string& dir) {
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir)) throw Exit{kDataError, "not a directory: " + dir};
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.emplace(e.path().filename().string(), e.path());
    return out;
}

int cmd_eval(const EvalArgs& a) {
    if (a.scale < 1 || a.scale > 4) throw Exit{kUsage, "scale must be 1 (identity) or in {2,3,4}"};
    if (a.method != "bicubic" && a.method != "model") throw Exit{kUsage, "method must be bicubic or model"};
    const int64_t crop = a.crop >= 0 ? a.crop : a.scale;
    const auto hr = png_files(a.hr_dir);
    const auto lr = png_files(a.lr_dir);

    std::optional<NgswinModel> model;
    ModelConfig cfg;
    NormStats stats = obtain_stats(a.stats);
    if (a.method == "model" && a.scale > 1) {
        cfg = ModelConfig::standard(a.scale);
        cfg.mode = parse_mode(a.attention);
        model.emplace(cfg, obtain_weights(a.weights, cfg, a.seed));
    }

    std::vector<std::string> names, skipped;
    for (const auto& [name, _] : hr) (lr.contains(name) ? names : skipped).push_back(name);
    for (const auto& [name, _] : lr)
        if (!hr.contains(name)) skipped.push_back(name);
    std::sort(skipped.begin(), skipped.end());

    struct Row {
        double psnr = 0, ssim = 0;
        std::string error;
    };
    std::vector<Row> rows(names.size());
    const int workers = a.workers > 0 ? a.workers : thread_budget();
    parallel_for(
        static_cast<int64_t>(names.size()),
        [&](int64_t i) {
            Row& row = rows[static_cast<size_t>(i)];
            try {
                ImageBuffer ref = read_png(hr.at(names[static_cast<size_t>(i)]).string());
                const ImageBuffer low = read_png(lr.at(names[static_cast<size_t>(i)]).string());
                ImageBuffer sr = a.scale == 1          ? low
                                 : model.has_value() ? model->forward(low, stats)
                                                     : bicubic_resize(low, static_cast<double>(a.scale));
                // HR extents that are not multiples of the scale lose their last rows/cols
                if (ref.height != sr.height || ref.width != sr.width) {
                    if (ref.height < sr.height || ref.width < sr.width || ref.height - sr.height >= a.scale ||
                        ref.width - sr.width >= a.scale)
                        throw ShapeError("HR " + std::to_string(ref.width) + "x" + std::to_string(ref.height) +
                                         " does not match SR " + std::to_string(sr.width) + "x" +
                                         std::to_string(sr.height));
                    ImageBuffer c(sr.height, sr.width, ref.channels);
                    for (int64_t ch = 0; ch < ref.channels; ++ch)
                        for (int64_t y = 0; y < sr.height; ++y)
                            for (int64_t x = 0; x < sr.width; ++x) c.at(ch, y, x) = ref.at(ch, y, x);
                    ref = std::move(c);
                }
                row.psnr = psnr(sr, ref, crop);
                row.ssim = ssim(sr, ref, crop);
            } catch (const std::exception& e) {
                row.error = e.what();
            }
        },
        workers);

    json images = json::array();
    double sum_psnr = 0, sum_ssim = 0;
    int64_t counted = 0;
    std::vector<std::string> failed;
    for (size_t i = 0; i < names.size(); ++i) {
        if (!rows[i].error.empty()) {
            failed.push_back(names[i] + ": " + rows[i].error);
            continue;
        }
        images.push_back({{"name", names[i]}, {"psnr", db_value(rows[i].psnr)}, {"ssim", rows[i].ssim}});
        sum_psnr += rows[i].psnr;
        sum_ssim += rows[i].ssim;
        ++counted;
    }
    for (const auto& s : skipped) std::fprintf(stderr, "warning: unpaired file skipped: %s\n", s.c_str());
    for (const auto& s : failed) std::fprintf(stderr, "warning: %s\n", s.c_str());

    json j = {{"images", images},
              {"count", counted},
              {"mean_psnr", counted ? db_value(sum_psnr / static_cast<double>(counted)) : json(nullptr)},
              {"mean_ssim", counted ? json(sum_ssim / static_cast<double>(counted)) : json(nullptr)},
              {"skipped", skipped},
              {"failed", failed},
              {"warnings", skipped.size() + failed.size()},
              {"protocol",
               {{"channel", "Y (BT.601 studio swing)"}, {"quantization", "round to 8-bit"}, {"crop", crop},
                {"ssim_window", "gaussian 11x11 sigma 1.5"}}}};
    j["manifest"] = manifest("eval", {{"hr_dir", a.hr_dir},
                                      {"lr_dir", a.lr_dir},
                                      {"method", a.scale == 1 ? "identity" : a.method},
                                      {"scale", a.scale},
                                      {"weights", a.weights.empty() ? json(nullptr) : json(a.weights)},
                                      {"seed", a.seed},
                                      {"config", model ? to_json_value(cfg) : json(nullptr)},
                                      {"report", a.report}});
    // worker count does not change results, so it stays out of the report
    j["manifest"].erase("threads");
    emit(j, a.report);
    return kOk;
}

// ---------------------------------------------------------------------------

struct DegradeArgs {
    std::string input, output, report;
    int64_t scale = 4;
};

int cmd_degrade(const DegradeArgs& a) {
    if (a.scale < 1) throw Exit{kUsage, "scale must be positive"};
    ImageBuffer img = load_image(a.input, kUsage);
    const int64_t h = img.height / a.scale * a.scale, w = img.width / a.scale * a.scale;
    if (h == 0 || w == 0) throw Exit{kDataError, "image smaller than the scale factor"};
    const bool cropped = h != img.height || w != img.width;
    if (cropped) {
        const int64_t oy = (img.height - h) / 2, ox = (img.width - w) / 2;
        ImageBuffer c(h, w, img.channels);
        for (int64_t ch = 0; ch < img.channels; ++ch)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) c.at(ch, y, x) = img.at(ch, y + oy, x + ox);
        std::fprintf(stderr, "degrade: center-cropped %lldx%lld to %lldx%lld\n", static_cast<long long>(img.width),
                     static_cast<long long>(img.height), static_cast<long long>(w), static_cast<long long>(h));
        img = std::move(c);
    }
    const ImageBuffer lr = bicubic_resize(img, 1.0 / static_cast<double>(a.scale));
    try {
        write_png(lr, a.output);
    } catch (const ImageError& e) {
        throw Exit{kDataError, e.what()};
    }
    json j = {{"output", a.output},
              {"cropped", cropped},
              {"hr_size", {img.width, img.height}},
              {"lr_size", {lr.width, lr.height}}};
    j["manifest"] = manifest("degrade", {{"input", a.input}, {"output", a.output}, {"scale", a.scale}, {"report", a.report}});
    emit(j, a.report);
    return kOk;
}

// ---------------------------------------------------------------------------

int cmd_selftest(const std::string& report) {
    std::vector<testing::SuiteResult> suites;
    const double secs = timed([&] { suites = testing::run_selftest(); });
    bool ok = true;
    json arr = json::array();
    for (const auto& s : suites) {
        ok = ok && s.ok();
        std::fprintf(stderr, "%-20s %3lld/%-3lld %s  worst %.3g\n", s.name.c_str(), static_cast<long long>(s.passed),
                     static_cast<long long>(s.total), s.ok() ? "ok" : "FAIL", s.worst);
        if (!s.failing_seeds.empty()) {
            std::string seeds;
            for (auto sd : s.failing_seeds) seeds += " " + std::to_string(sd);
            std::fprintf(stderr, "  failing seeds:%s\n", seeds.c_str());
        }
        arr.push_back({{"suite", s.name},
                       {"passed", s.passed},
                       {"total", s.total},
                       {"worst_error", s.worst},
                       {"failing_seeds", s.failing_seeds}});
    }
    std::fprintf(stderr, "selftest: %.2f s\n", secs);
    json j = {{"suites", arr}, {"ok", ok}};
    j["manifest"] = manifest("selftest", {{"report", report}});
    emit(j, report);
    return ok ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------

struct MicrofitArgs {
    int64_t steps = 300;
    uint64_t seed = 42;
    std::string report;
    bool check = false;
};

int cmd_microfit(const MicrofitArgs& a) {
    if (a.steps < 0) throw Exit{kUsage, "steps must be >= 0"};
    SpsaOptions opt;
    opt.steps = a.steps;
    opt.seed = a.seed;
    const ModelConfig cfg = ModelConfig::micro(2);
    MicrofitResult res;
    const double secs = timed([&] { res = microfit(opt, synthetic_patch(32), cfg); });
    const double reduction = 1.0 - res.final_loss() / res.initial();
    std::fprintf(stderr, "microfit: %lld steps, loss %.6f -> %.6f (%.1f%% reduction) in %.2f s\n",
                 static_cast<long long>(res.losses.size() - 1), res.initial(), res.final_loss(), reduction * 100, secs);
    json j = {{"trace", res.losses},
              {"initial_loss", res.initial()},
              {"final_loss", res.final_loss()},
              {"reduction", reduction},
              {"diverged", res.diverged},
              {"optimizer",
               {{"method", "spsa"}, {"a", opt.a}, {"c", opt.c}, {"A", opt.big_a}, {"alpha", opt.alpha}, {"gamma", opt.gamma}}},
              {"data", {{"hr", "synthetic 32x32"}, {"lr", "bicubic 16x16"}, {"loss", "l1"}}}};
    j["manifest"] = manifest("microfit", {{"config", to_json_value(cfg)}, {"steps", a.steps}, {"seed", a.seed}, {"report", a.report}});
    emit(j, a.report);
    if (res.diverged) return kCheckFailed;
    if (a.check && reduction < 0.5) return kCheckFailed;
    return kOk;
}

// ---------------------------------------------------------------------------

struct InitArgs {
    int64_t scale = 2;
    uint64_t seed = 0;
    std::string output, report, attention = "cosine";
    bool micro = false;
};

int cmd_init(const InitArgs& a) {
    ModelConfig cfg = a.micro ? ModelConfig::micro(a.scale) : ModelConfig::standard(a.scale);
    cfg.mode = parse_mode(a.attention);
    const WeightStore w = init_weights(cfg, a.seed);
    try {
        save_weights(w, a.output);
    } catch (const WeightError& e) {
        throw Exit{kDataError, e.what()};
    }
    json j = {{"output", a.output}, {"tensors", w.size()}, {"parameters", w.total_elements()}};
    j["manifest"] = manifest("init", {{"config", to_json_value(cfg)}, {"seed", a.seed}, {"report", a.report}});
    emit(j, a.report);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ngsr: N-Gram window-attention super-resolution toolkit"};
    app.require_subcommand(1);

    AnalyzeArgs an;
    auto* analyze = app.add_subcommand("analyze", "Parameter and Mult-Adds report");
    analyze->add_option("--scale", an.scale, "Upscaling factor")->check(CLI::IsMember({2, 3, 4}));
    analyze->add_option("--hr-size", an.hr, "HR target WxH");
    analyze->add_option("--format", an.format, "json or text")->check(CLI::IsMember({"json", "text"}));
    analyze->add_option("--output,-o", an.output, "Report file (default stdout)");
    analyze->add_option("--attention", an.attention, "cosine or dot-product");
    analyze->add_flag("--check", an.check, "Exit 1 unless totals are within tolerance of the expected figures");

    InferArgs in;
    auto* infer = app.add_subcommand("infer", "Super-resolve one PNG");
    infer->add_option("--weights,-w", in.weights, "NGSW weight file (default: seeded random init)");
    infer->add_option("--scale", in.scale)->check(CLI::IsMember({2, 3, 4}));
    infer->add_option("--input,-i", in.input)->required();
    infer->add_option("--output,-o", in.output)->required();
    infer->add_option("--stats", in.stats, "Normalization stats JSON");
    infer->add_option("--seed", in.seed, "Seed for random weights when --weights is absent");
    infer->add_option("--dump-features", in.dump, "Directory for intermediate feature maps");
    infer->add_option("--report", in.report, "Report file (default stdout)");
    infer->add_option("--attention", in.attention);

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Y-channel PSNR/SSIM over paired directories");
    eval->add_option("--hr-dir", ev.hr_dir)->required();
    eval->add_option("--lr-dir", ev.lr_dir)->required();
    eval->add_option("--weights,-w", ev.weights);
    eval->add_option("--scale", ev.scale, "1 compares the LR files directly")->check(CLI::Range(1, 4));
    eval->add_option("--method", ev.method, "bicubic or model")->check(CLI::IsMember({"bicubic", "model"}));
    eval->add_option("--crop", ev.crop, "Border crop (default: scale)");
    eval->add_option("--workers", ev.workers, "Parallel images (default NGSR_THREADS)");
    eval->add_option("--stats", ev.stats);
    eval->add_option("--seed", ev.seed);
    eval->add_option("--report", ev.report);
    eval->add_option("--attention", ev.attention);

    DegradeArgs dg;
    auto* degrade = app.add_subcommand("degrade", "Bicubic downscale of one PNG");
    degrade->add_option("--input,-i", dg.input)->required();
    degrade->add_option("--output,-o", dg.output)->required();
    degrade->add_option("--scale", dg.scale)->check(CLI::Range(1, 16));
    degrade->add_option("--report", dg.report);

    std::string st_report;
    auto* selftest = app.add_subcommand("selftest", "Run the oracle suites");
    selftest->add_option("--report", st_report);

    MicrofitArgs mf;
    auto* micro = app.add_subcommand("microfit", "SPSA fit of the micro network to one patch");
    micro->add_option("--steps", mf.steps);
    micro->add_option("--seed", mf.seed);
    micro->add_option("--report", mf.report);
    micro->add_flag("--check", mf.check, "Exit 1 unless the loss halves");

    InitArgs ia;
    auto* init = app.add_subcommand("init", "Write seeded initial weights");
    init->add_option("--scale", ia.scale)->check(CLI::IsMember({2, 3, 4}));
    init->add_option("--seed", ia.seed);
    init->add_option("--output,-o", ia.output)->required();
    init->add_option("--attention", ia.attention);
    init->add_flag("--micro", ia.micro, "Micro configuration instead of the default network");
    init->add_option("--report", ia.report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*analyze) return cmd_analyze(an);
        if (*infer) return cmd_infer(in);
        if (*eval) return cmd_eval(ev);
        if (*degrade) return cmd_degrade(dg);
        if (*selftest) return cmd_selftest(st_report);
        if (*micro) return cmd_microfit(mf);
        if (*init) return cmd_init(ia);
    } catch (const Exit& e) {
        std::fprintf(stderr, "error: %s\n", e.message.c_str());
        return e.code;
    } catch (const WeightError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kDataError;
    } catch (const ImageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kDataError;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kDataError;
    }
    return kUsage;
}
