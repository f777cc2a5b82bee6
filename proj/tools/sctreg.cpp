// sctreg command-line tool.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "sctreg/ensemble.hpp"
#include "sctreg/eval_metrics.hpp"
#include "sctreg/metaimage.hpp"
#include "sctreg/parallel.hpp"
#include "sctreg/phantom.hpp"
#include "sctreg/preprocess.hpp"
#include "sctreg/registration.hpp"
#include "sctreg/transform_io.hpp"

#ifndef SCTREG_VERSION
#define SCTREG_VERSION "dev"
#endif

using namespace sctreg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kReportFormatVersion = 1;

enum Exit { ok = 0, usage = 1, data = 2, numeric = 3 };

/// JSON config files: top-level keys are global options, nested objects
/// hold subcommand options ({"register": {"metric": "mind"}}).
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override
    {
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw CLI::ConversionError(std::string("config: invalid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("config: top level must be an object");
        std::vector<CLI::ConfigItem> items;
        collect(j, {}, items);
        return items;
    }

private:
    static std::string scalar(const json& v)
    {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static void collect(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out)
    {
        for (const auto& [key, v] : j.items()) {
            if (v.is_object()) {
                auto p = parents;
                p.push_back(key);
                CLI::ConfigItem open;
                open.parents = parents;
                open.name = key;
                open.inputs = {"ON"};
                out.push_back(open);
                collect(v, p, out);
                CLI::ConfigItem close;
                close.parents = p;
                close.name = "--";
                out.push_back(close);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (v.is_array())
                for (const auto& e : v) item.inputs.push_back(scalar(e));
            else
                item.inputs.push_back(scalar(v));
            out.push_back(item);
        }
    }
};

void fail_line(const char* kind, const std::string& message)
{
    std::cerr << json{{"level", "error"}, {"kind", kind}, {"message", message}}.dump() << "\n";
}

/// Option values of a (sub)command, including defaults.
json echo_options(const CLI::App* app)
{
    json out = json::object();
    for (const CLI::Option* o : app->get_options()) {
        const std::string name = o->get_single_name();
        if (name.empty() || name == "help" || name == "config" || name == "version") continue;
        if (o->count() > 0) {
            const auto& r = o->results();
            out[name] = r.size() == 1 && o->get_expected_max() <= 1 ? json(r.front()) : json(r);
        } else if (!o->get_default_str().empty()) {
            out[name] = o->get_default_str();
        } else {
            out[name] = nullptr;
        }
    }
    return out;
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

void write_json(const json& j, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(path + ": invalid JSON: " + e.what());
    }
}

BodyMask load_mask(const std::string& path) { return BodyMask(load_mha(path)); }

BSplineTransform load_any_transform(const std::string& path)
{
    if (fs::path(path).extension() == ".txt") {
        const ElastixImport imp = parse_elastix_transform(path);
        if (imp.initial_transform) spdlog::warn("{} chains to {}; only this stage is applied", path, *imp.initial_transform);
        return imp.transform;
    }
    return load_transform(path);
}

json trace_json(const RegistrationResult& r)
{
    json levels = json::array();
    for (const LevelTrace& L : r.levels)
        levels.push_back({{"level", L.level},
                          {"grid_spacing", L.grid_spacing},
                          {"grid_dims", L.grid_dims},
                          {"initial_cost", number_or_null(L.initial_cost)},
                          {"accepted_cost", number_or_null(L.accepted_cost)},
                          {"accepted_iteration", L.accepted_iteration},
                          {"iterations", L.iterations},
                          {"converged", L.converged},
                          {"non_finite", L.non_finite},
                          {"train_cost", L.train_cost},
                          {"validation_cost", L.validation_cost}});
    json summary = json::array();
    if (!r.levels.empty())
        for (const LevelSummary& s : evaluate_cost_trace(r).levels)
            summary.push_back({{"level", s.level},
                               {"initial_cost", number_or_null(s.initial_cost)},
                               {"final_cost", number_or_null(s.final_cost)},
                               {"relative_decrease", number_or_null(s.relative_decrease)}});
    return {{"levels", levels}, {"summary", summary}, {"wall_time_s", r.wall_time}, {"aborted", r.aborted},
            {"abort_reason", r.abort_reason}};
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
    std::string image, mask, out, modality = "ct";
    NormalizationSpec spec;
};

void run_preprocess(const PreprocessArgs& a)
{
    NormalizationSpec spec = a.spec;
    spec.modality = a.modality == "ct" ? Modality::ct : a.modality == "cbct" ? Modality::cbct : Modality::mri;
    const Volume v = load_mha(a.image);
    const Volume r = preprocess(v, load_mask(a.mask), spec);
    write_mha(r, a.out);
    spdlog::info("preprocess: {} -> {}", a.image, a.out);
}

struct RegisterArgs {
    std::string fixed, moving, mask, out, report, elastix_out, fixed_features, moving_features, metric = "mse";
    RegistrationConfig cfg;
};

int run_register(const RegisterArgs& a, const json& echo)
{
    RegistrationConfig cfg = a.cfg;
    cfg.metric.kind = parse_metric_kind(a.metric);
    const Volume fixed = load_mha(a.fixed), moving = load_mha(a.moving);
    const BodyMask mask = load_mask(a.mask);
    std::optional<Volume> ff, mf;
    FeatureVolumes fv;
    if (!a.fixed_features.empty() || !a.moving_features.empty()) {
        if (a.fixed_features.empty() || a.moving_features.empty())
            throw ValidationError("register: --fixed-features and --moving-features must be given together");
        ff = load_mha(a.fixed_features);
        mf = load_mha(a.moving_features);
        fv = {&*ff, &*mf};
    }
    const std::string report = a.report.empty() ? (fs::path(a.out).replace_extension("").string() + ".report.json") : a.report;
    json rep{{"format_version", kReportFormatVersion},
             {"command", "register"},
             {"version", SCTREG_VERSION},
             {"config", echo},
             {"resolved",
              {{"metric", metric_name(cfg.metric.kind)},
               {"levels", cfg.levels},
               {"final_grid_spacing", cfg.final_grid_spacing},
               {"samples_per_iter", cfg.samples_per_iter},
               {"max_iters_per_level", cfg.max_iters_per_level},
               {"validation_samples", cfg.validation_samples},
               {"convergence_window", cfg.convergence_window},
               {"convergence_tol", cfg.convergence_tol},
               {"mattes_bins", cfg.metric.mattes.bins},
               {"optimizer",
                {{"step_size", cfg.optimizer.step_size},
                 {"beta1", cfg.optimizer.beta1},
                 {"beta2", cfg.optimizer.beta2},
                 {"eps", cfg.optimizer.eps},
                 {"decay_iterations", cfg.optimizer.decay_iterations},
                 {"decay_power", cfg.optimizer.decay_power},
                 {"average_decay", cfg.optimizer.average_decay}}},
               {"seed", cfg.seed}}},
             {"threads", effective_threads()}};
    spdlog::info("register: metric {}, {} levels, final grid {} mm", metric_name(cfg.metric.kind), cfg.levels,
                 cfg.final_grid_spacing);
    try {
        const RegistrationResult r = register_volumes(fixed, moving, mask, cfg, fv);
        save_transform(r.transform, a.out);
        if (!a.elastix_out.empty()) write_elastix_transform(r.transform, a.elastix_out);
        rep["trace"] = trace_json(r);
        write_json(rep, report);
        for (const LevelTrace& L : r.levels)
            spdlog::info("level {}: cost {:.6g} -> {:.6g} in {} iterations", L.level, L.initial_cost, L.accepted_cost, L.iterations);
        spdlog::info("register: {:.1f} s, transform {}, report {}", r.wall_time, a.out, report);
        return Exit::ok;
    } catch (const RegistrationAborted& e) {
        rep["trace"] = trace_json(e.partial());
        write_json(rep, report);
        throw;
    }
}

struct ApplyArgs {
    std::string transform, image, like, out;
    double background = kAirHU;
};

void run_apply(const ApplyArgs& a)
{
    const BSplineTransform T = load_any_transform(a.transform);
    const Volume v = load_mha(a.image);
    const Geometry target = a.like.empty() ? v.geometry() : load_mha(a.like).geometry();
    write_mha(warp_volume(v, T, target, a.background), a.out);
    spdlog::info("transform apply: {} -> {}", a.image, a.out);
}

struct EvaluateArgs {
    std::string gt, pred, mask, gt_seg, pred_seg, region = "other", report;
    int label = 1;
    int scales = 5;
    double data_range = kDefaultDataRange;
};

void run_evaluate(const EvaluateArgs& a, const json& echo)
{
    const Volume gt = load_mha(a.gt), pred = load_mha(a.pred);
    const BodyMask mask = load_mask(a.mask);
    SsimOptions so;
    so.data_range = a.data_range;
    const MsSsimResult ss = ms_ssim(gt, pred, mask, a.scales, so);
    const double p = psnr(gt, pred, mask, a.data_range);
    json metrics{{"mae", mae(gt, pred, mask)},
                 {"psnr", number_or_null(p)},
                 {"psnr_infinite", std::isinf(p)},
                 {"ms_ssim", ss.value},
                 {"ms_ssim_scales_used", ss.scales_used},
                 {"ms_ssim_scales_reduced", ss.scales_reduced}};
    if (!a.gt_seg.empty() || !a.pred_seg.empty()) {
        if (a.gt_seg.empty() || a.pred_seg.empty()) throw ValidationError("evaluate: --gt-seg and --pred-seg must be given together");
        const Volume gs = load_mha(a.gt_seg), ps = load_mha(a.pred_seg);
        const DiceResult d = dice(gs, ps, a.label);
        metrics["dice"] = d.value;
        metrics["dice_both_empty"] = d.both_empty;
        metrics["hd95"] = d.both_empty ? json(nullptr) : json(hd95(gs, ps, a.label));
    }
    const json rep{{"format_version", kReportFormatVersion},
                   {"command", "evaluate"},
                   {"version", SCTREG_VERSION},
                   {"config", echo},
                   {"region", region_name(parse_region(a.region))},
                   {"metrics", metrics}};
    if (a.report.empty())
        std::cout << rep.dump(2) << "\n";
    else
        write_json(rep, a.report);
    spdlog::info("evaluate: mae {:.4f}, psnr {:.4f}, ms_ssim {:.4f}", metrics["mae"].get<double>(), p, ss.value);
}

json metrics_json(const RegionMetrics& m)
{
    json j{{"mae", m.mae}, {"psnr", number_or_null(m.psnr)}, {"ms_ssim", m.ms_ssim}};
    if (m.dice) j["dice"] = *m.dice;
    if (m.hd95) j["hd95"] = *m.hd95;
    return j;
}

RegionMetrics rounded(const RegionMetrics& m)
{
    RegionMetrics r{round2(m.mae), round2(m.psnr), round2(m.ms_ssim), std::nullopt, std::nullopt};
    if (m.dice) r.dice = round2(*m.dice);
    if (m.hd95) r.hd95 = round2(*m.hd95);
    return r;
}

void run_aggregate(const std::vector<std::string>& inputs, const std::string& out, const json& echo)
{
    struct Acc {
        double mae = 0, psnr = 0, ms_ssim = 0, dice = 0, hd95 = 0;
        int n = 0, n_dice = 0, n_hd95 = 0;
    };
    std::map<Region, Acc> acc;
    for (const std::string& path : inputs) {
        const json j = read_json(path);
        if (!j.contains("format_version") || j["format_version"] != kReportFormatVersion)
            throw ValidationError(path + ": unsupported or missing format_version");
        if (!j.contains("metrics") || !j.contains("region")) throw ValidationError(path + ": not an evaluate report");
        const json& m = j["metrics"];
        Acc& a = acc[parse_region(j["region"].get<std::string>())];
        a.mae += m.at("mae").get<double>();
        a.psnr += m.value("psnr_infinite", false) ? INFINITY : m.at("psnr").get<double>();
        a.ms_ssim += m.at("ms_ssim").get<double>();
        ++a.n;
        if (m.contains("dice")) { a.dice += m["dice"].get<double>(); ++a.n_dice; }
        if (m.contains("hd95") && !m["hd95"].is_null()) { a.hd95 += m["hd95"].get<double>(); ++a.n_hd95; }
    }
    std::map<Region, RegionMetrics> per;
    json cases = json::object();
    for (const auto& [r, a] : acc) {
        RegionMetrics m{a.mae / a.n, a.psnr / a.n, a.ms_ssim / a.n, std::nullopt, std::nullopt};
        if (a.n_dice) m.dice = a.dice / a.n_dice;
        if (a.n_hd95) m.hd95 = a.hd95 / a.n_hd95;
        per[r] = m;
        cases[region_name(r)] = a.n;
    }
    const AggregateReport rep = aggregate_regions(per);
    json regions = json::object(), display = json::object();
    for (const auto& [r, m] : rep.per_region) {
        regions[region_name(r)] = metrics_json(m);
        display[region_name(r)] = metrics_json(rounded(m));
    }
    display["aggregated"] = metrics_json(rounded(rep.aggregated));
    write_json({{"format_version", kReportFormatVersion},
                {"command", "report aggregate"},
                {"version", SCTREG_VERSION},
                {"config", echo},
                {"cases", cases},
                {"per_region", regions},
                {"aggregated", metrics_json(rep.aggregated)},
                {"display", display}},
               out);
    spdlog::info("report aggregate: {} reports -> {}", inputs.size(), out);
}

void run_ensemble(const std::vector<std::string>& inputs, std::vector<std::string> flips, const std::string& out)
{
    if (flips.size() == 1 && inputs.size() > 1 && flips.front().find(',') != std::string::npos) {
        std::vector<std::string> split;
        std::string cur;
        for (char c : flips.front() + ",") {
            if (c == ',') { split.push_back(cur); cur.clear(); }
            else cur += c;
        }
        flips = split;
    }
    if (!flips.empty() && flips.size() != inputs.size())
        throw ValidationError("ensemble: " + std::to_string(flips.size()) + " flip entries for " + std::to_string(inputs.size()) + " inputs");
    std::vector<std::pair<Volume, FlipSpec>> preds;
    for (std::size_t i = 0; i < inputs.size(); ++i) preds.emplace_back(load_mha(inputs[i]), flips.empty() ? FlipSpec{} : parse_flip(flips[i]));
    write_mha(tta_average(preds), out);
    spdlog::info("ensemble: {} inputs -> {}", inputs.size(), out);
}

void run_errormap(const std::string& gt, const std::string& pred, const std::string& mask, const std::string& out)
{
    write_mha(error_map(load_mha(gt), load_mha(pred), load_mask(mask)), out);
    spdlog::info("errormap: -> {}", out);
}

struct PhantomArgs {
    int dims = 64;
    double spacing = 2.0;
    std::string prefix = "phantom", remap = "invert";
    std::size_t landmarks = 256;
    bool features = false;
};

void run_phantom(const PhantomArgs& a, std::uint64_t seed)
{
    PhantomOptions opt;
    opt.landmarks = a.landmarks;
    const Phantom p = make_phantom({a.dims, a.dims, a.dims}, a.spacing, seed, opt);
    write_mha(p.image, a.prefix + "_image.mha");
    write_mha(p.mask.volume(), a.prefix + "_mask.mha", ElementType::met_uchar);
    const RemapMode mode = parse_remap_mode(a.remap);
    write_mha(mode == RemapMode::invert && p.modality_twin ? *p.modality_twin : modality_remap(p.image, mode),
              a.prefix + "_twin.mha");
    write_landmarks(p.landmarks, a.prefix + "_landmarks.txt");
    if (a.features) write_mha(synthetic_features(p.image), a.prefix + "_features.mha");
    spdlog::info("phantom make: {}^3 at {} mm, seed {}, {} landmarks -> {}_*", a.dims, a.spacing, seed, p.landmarks.size(), a.prefix);
}

} // namespace

int main(int argc, char** argv)
{
    auto logger = spdlog::stderr_color_mt("sctreg");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");

    CLI::App app{"Deformable multimodal registration and synthetic-CT evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON config file; command-line flags override its values");
    app.set_version_flag("--version", std::string("sctreg ") + SCTREG_VERSION + " (" __DATE__ ")");

    int threads = 0;
    std::uint64_t seed = 0;
    std::string log_level = "info";
    app.add_option("--threads", threads, "Worker threads (0 = auto)")->capture_default_str()->check(CLI::NonNegativeNumber);
    app.add_option("--seed", seed, "Random seed")->capture_default_str();
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();


    PreprocessArgs pre;
    auto* c_pre = app.add_subcommand("preprocess", "Normalize an image inside a body mask");
    c_pre->add_option("--modality", pre.modality)->capture_default_str()->check(CLI::IsMember({"ct", "cbct", "mri"}));
    c_pre->add_option("--image", pre.image)->required();
    c_pre->add_option("--mask", pre.mask)->required();
    c_pre->add_option("--out", pre.out)->required();
    c_pre->add_option("--clip-lo", pre.spec.ct_clip_lo, "CT lower clip (HU)")->capture_default_str();
    c_pre->add_option("--clip-hi", pre.spec.ct_clip_hi, "CT upper clip (HU)")->capture_default_str();
    c_pre->add_option("--percentile", pre.spec.cbct_upper_percentile, "CBCT upper percentile")->capture_default_str();

    RegisterArgs reg;
    auto* c_reg = app.add_subcommand("register", "Deformable B-spline registration");
    c_reg->add_option("--fixed", reg.fixed)->required();
    c_reg->add_option("--moving", reg.moving)->required();
    c_reg->add_option("--mask", reg.mask, "Fixed-image body mask")->required();
    c_reg->add_option("--out", reg.out, "Transform JSON")->required();
    c_reg->add_option("--report", reg.report, "Run report JSON (default <out>.report.json)");
    c_reg->add_option("--elastix-out", reg.elastix_out, "Also write an Elastix TransformParameters file");
    c_reg->add_option("--metric", reg.metric, "mse|nmi|mind|feat")->capture_default_str();
    c_reg->add_option("--levels", reg.cfg.levels)->capture_default_str();
    c_reg->add_option("--grid-spacing", reg.cfg.final_grid_spacing, "Final control-point spacing (mm)")->capture_default_str();
    c_reg->add_option("--samples", reg.cfg.samples_per_iter, "Samples per iteration")->capture_default_str();
    c_reg->add_option("--iters", reg.cfg.max_iters_per_level, "Iterations per level")->capture_default_str();
    c_reg->add_option("--validation-samples", reg.cfg.validation_samples)->capture_default_str();
    c_reg->add_option("--step", reg.cfg.optimizer.step_size, "Step size (mm at the final grid)")->capture_default_str();
    c_reg->add_option("--bins", reg.cfg.metric.mattes.bins, "Mattes MI histogram bins")->capture_default_str();
    c_reg->add_option("--fixed-features", reg.fixed_features);
    c_reg->add_option("--moving-features", reg.moving_features);

    auto* c_tr = app.add_subcommand("transform", "Transform operations");
    c_tr->require_subcommand(1);
    ApplyArgs apply;
    auto* c_apply = c_tr->add_subcommand("apply", "Warp an image with a transform");
    c_apply->add_option("--transform", apply.transform, "Transform JSON or Elastix .txt")->required();
    c_apply->add_option("--image", apply.image)->required();
    c_apply->add_option("--like", apply.like, "Reference image supplying the output grid");
    c_apply->add_option("--out", apply.out)->required();
    c_apply->add_option("--background", apply.background, "Value outside the moving image")->capture_default_str();

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "Image-similarity and segmentation metrics for one case");
    c_ev->add_option("--gt", ev.gt)->required();
    c_ev->add_option("--pred", ev.pred)->required();
    c_ev->add_option("--mask", ev.mask)->required();
    c_ev->add_option("--gt-seg", ev.gt_seg);
    c_ev->add_option("--pred-seg", ev.pred_seg);
    c_ev->add_option("--label", ev.label, "Segmentation label")->capture_default_str();
    c_ev->add_option("--region", ev.region, "AB|HN|TH|other")->capture_default_str();
    c_ev->add_option("--data-range", ev.data_range, "PSNR/SSIM data range (HU)")->capture_default_str();
    c_ev->add_option("--scales", ev.scales, "MS-SSIM scales")->capture_default_str();
    c_ev->add_option("--report", ev.report, "Report JSON (default stdout)");

    auto* c_rep = app.add_subcommand("report", "Report operations");
    c_rep->require_subcommand(1);
    std::vector<std::string> agg_inputs;
    std::string agg_out;
    auto* c_agg = c_rep->add_subcommand("aggregate", "Aggregate case reports per region");
    c_agg->add_option("--inputs", agg_inputs)->required();
    c_agg->add_option("--out", agg_out)->required();

    std::vector<std::string> ens_inputs, ens_flips;
    std::string ens_out;
    auto* c_ens = app.add_subcommand("ensemble", "Average predictions after undoing flips");
    c_ens->add_option("--inputs", ens_inputs)->required();
    c_ens->add_option("--flips", ens_flips, "One entry per input (axes such as x or yz; empty = none)");
    c_ens->add_option("--out", ens_out)->required();

    std::string em_gt, em_pred, em_mask, em_out;
    auto* c_em = app.add_subcommand("errormap", "Absolute HU error inside the mask");
    c_em->add_option("--gt", em_gt)->required();
    c_em->add_option("--pred", em_pred)->required();
    c_em->add_option("--mask", em_mask)->required();
    c_em->add_option("--out", em_out)->required();

    auto* c_ph = app.add_subcommand("phantom", "Synthetic phantom operations");
    c_ph->require_subcommand(1);
    PhantomArgs ph;
    auto* c_make = c_ph->add_subcommand("make", "Write a phantom image, mask, twin and landmarks");
    c_make->add_option("--dims", ph.dims)->capture_default_str();
    c_make->add_option("--spacing", ph.spacing, "mm")->capture_default_str();
    c_make->add_option("--out-prefix", ph.prefix)->capture_default_str();
    c_make->add_option("--landmarks", ph.landmarks)->capture_default_str();
    c_make->add_option("--remap", ph.remap, "Twin remap: invert|gamma|piecewise")->capture_default_str();
    c_make->add_flag("--features", ph.features, "Also write 6-channel synthetic features of the image");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail_line("usage", e.what());
        return Exit::usage;
    }

    const auto level = spdlog::level::from_str(log_level);
    spdlog::set_level(level);
    set_threads(threads);
    reg.cfg.seed = seed;

    const auto echo_with_globals = [&](const CLI::App* sub) {
        json e = echo_options(sub);
        e["threads"] = threads;
        e["seed"] = seed;
        return e;
    };

    try {
        if (c_pre->parsed()) run_preprocess(pre);
        else if (c_reg->parsed()) return run_register(reg, echo_with_globals(c_reg));
        else if (c_apply->parsed()) run_apply(apply);
        else if (c_ev->parsed()) run_evaluate(ev, echo_with_globals(c_ev));
        else if (c_agg->parsed()) run_aggregate(agg_inputs, agg_out, echo_with_globals(c_agg));
        else if (c_ens->parsed()) run_ensemble(ens_inputs, ens_flips, ens_out);
        else if (c_em->parsed()) run_errormap(em_gt, em_pred, em_mask, em_out);
        else if (c_make->parsed()) run_phantom(ph, seed);
        return Exit::ok;
    } catch (const NumericError& e) {
        fail_line("numeric", e.what());
        return Exit::numeric;
    } catch (const Error& e) {
        fail_line("data", e.what());
        return Exit::data;
    } catch (const json::exception& e) {
        fail_line("data", e.what());
        return Exit::data;
    } catch (const std::exception& e) {
        fail_line("internal", e.what());
        return Exit::data;
    }
}
