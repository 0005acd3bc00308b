// Command-line workbench: train and evaluate the recurrent flow estimator on
// streamed synthetic scenes, audit gradients, dump attention windows, and
// emit sample corpora.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gaussflow/checkpoint.hpp"
#include "gaussflow/config.hpp"
#include "gaussflow/flow_io.hpp"
#include "gaussflow/flow_net.hpp"
#include "gaussflow/metrics.hpp"
#include "gaussflow/optim.hpp"
#include "gaussflow/queue.hpp"
#include "gaussflow/registry.hpp"
#include "gaussflow/synth.hpp"

namespace gf = gaussflow;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kEvalSeedBase = 900000000ULL;       // held-out metric corpus
constexpr std::uint64_t kTrainEvalSeedBase = 500000000ULL;  // quick in-training probes
constexpr int kTrainEvalSeeds = 5;

std::uint64_t train_scene_seed(std::uint64_t run_seed, int step) {
    return run_seed * 1000003ULL + static_cast<std::uint64_t>(step);
}

struct EvalResult {
    std::size_t pixels = 0;
    double epe = 0.0, f1 = 0.0, zero_epe = 0.0;
    gf::BinnedEpe bins;
};

EvalResult run_eval(const gf::FlowNet& net, int h, int w, int n_seeds, std::uint64_t seed_base) {
    gf::NoGradGuard ng;
    gf::MetricAccumulator acc, zero_acc;
    for (int i = 1; i <= n_seeds; ++i) {
        gf::SyntheticSample s = gf::generate(gf::random_scene(seed_base + i, h, w));
        std::vector<gf::FlowField> preds = net.forward(s.img1, s.img2);
        acc.add(preds.back(), s.gt, s.valid);
        gf::FlowField zero(gf::Tensor::zeros({h, w}), gf::Tensor::zeros({h, w}));
        zero_acc.add(zero, s.gt, s.valid);
    }
    EvalResult r;
    r.pixels = acc.pixels();
    r.epe = acc.epe();
    r.f1 = acc.f1_percent();
    r.bins = acc.binned();
    r.zero_epe = zero_acc.epe();
    return r;
}

json eval_record(const EvalResult& r) {
    json j;
    j["pixels"] = r.pixels;
    j["epe"] = r.epe;
    j["f1_all"] = r.f1;
    j["zero_flow_epe"] = r.zero_epe;
    j["s0_10"] = r.bins.s0_10 ? json(*r.bins.s0_10) : json(nullptr);
    j["s10_40"] = r.bins.s10_40 ? json(*r.bins.s10_40) : json(nullptr);
    j["s40plus"] = r.bins.s40plus ? json(*r.bins.s40plus) : json(nullptr);
    return j;
}

std::string checkpoint_path(const gf::RunConfig& cfg) {
    return cfg.ckpt.empty() ? cfg.out + "/model.ckpt" : cfg.ckpt;
}

void ensure_out_dir(const gf::RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out, ec);
    if (ec || !fs::is_directory(cfg.out))
        throw std::runtime_error("cannot create output directory " + cfg.out);
}

int cmd_train(const gf::RunConfig& cfg) {
    cfg.validate();
    ensure_out_dir(cfg);
    {
        std::ofstream cf(cfg.out + "/config.ini");
        cf << gf::serialize_config(cfg);
        if (!cf) throw std::runtime_error("cannot write " + cfg.out + "/config.ini");
    }
    std::ofstream log(cfg.out + "/train_log.jsonl");
    if (!log) throw std::runtime_error("cannot write " + cfg.out + "/train_log.jsonl");

    gf::FlowNet net(cfg.model_config(), cfg.seed);
    std::vector<std::pair<std::string, gf::Tensor>> params = net.params();
    gf::OptimConfig ocfg;
    ocfg.peak_lr = cfg.lr;
    ocfg.total_steps = std::max(1, cfg.steps);
    gf::Optimizer opt(params, ocfg);

    gf::BoundedQueue<gf::SyntheticSample> queue(4);
    std::thread producer([&] {
        for (int step = 1; step <= cfg.steps; ++step)
            if (!queue.push(gf::generate(
                    gf::random_scene(train_scene_seed(cfg.seed, step), cfg.height, cfg.width))))
                return;
        queue.close();
    });

    double last_loss = 0.0;
    for (int step = 1; step <= cfg.steps; ++step) {
        std::optional<gf::SyntheticSample> s = queue.pop();
        if (!s) break;
        double lr_now = opt.current_lr();
        std::vector<gf::FlowField> preds = net.forward(s->img1, s->img2);
        gf::Tensor loss = gf::sequence_loss(preds, s->gt, s->valid, cfg.gamma);
        double loss_val = loss[0];
        if (!std::isfinite(loss_val)) {
            queue.close();
            producer.join();
            throw std::runtime_error("train: loss is not finite at step " + std::to_string(step));
        }
        opt.zero_grad();
        loss.backward();
        double grad_norm = opt.step();
        last_loss = loss_val;
        json j;
        j["type"] = "train";
        j["step"] = step;
        j["loss"] = loss_val;
        j["lr"] = lr_now;
        j["grad_norm"] = grad_norm;
        log << j.dump() << "\n";
        if (cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps)) {
            EvalResult r =
                run_eval(net, cfg.height, cfg.width, kTrainEvalSeeds, kTrainEvalSeedBase);
            json e = eval_record(r);
            e["type"] = "eval";
            e["step"] = step;
            log << e.dump() << "\n";
            log.flush();
        }
    }
    queue.close();
    producer.join();

    std::string ckpt = checkpoint_path(cfg);
    gf::save_checkpoint(ckpt, params);
    std::printf("trained %d steps, final loss %.6f, checkpoint %s\n", cfg.steps, last_loss,
                ckpt.c_str());
    return 0;
}

int cmd_eval(const gf::RunConfig& cfg) {
    cfg.validate();
    gf::FlowNet net(cfg.model_config(), cfg.seed);
    if (!cfg.ckpt.empty()) {
        std::vector<std::pair<std::string, gf::Tensor>> params = net.params();
        gf::load_checkpoint(cfg.ckpt, params);
    }
    int eh = cfg.eval_height > 0 ? cfg.eval_height : cfg.height;
    int ew = cfg.eval_width > 0 ? cfg.eval_width : cfg.width;
    EvalResult r = run_eval(net, eh, ew, cfg.eval_seeds, kEvalSeedBase);
    auto bin_str = [](const std::optional<double>& b) {
        if (!b) return std::string("absent");
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", *b);
        return std::string(buf);
    };
    std::printf("eval_seeds     %d\n", cfg.eval_seeds);
    std::printf("canvas         %dx%d\n", eh, ew);
    std::printf("pixels         %zu\n", r.pixels);
    std::printf("epe            %.6f\n", r.epe);
    std::printf("f1_all         %.6f%%\n", r.f1);
    std::printf("epe_s0_10      %s\n", bin_str(r.bins.s0_10).c_str());
    std::printf("epe_s10_40     %s\n", bin_str(r.bins.s10_40).c_str());
    std::printf("epe_s40plus    %s\n", bin_str(r.bins.s40plus).c_str());
    std::printf("zero_flow_epe  %.6f\n", r.zero_epe);
    return 0;
}

int cmd_gradcheck(const gf::RunConfig&) {
    std::vector<gf::GradCheckCase> cases = gf::gradcheck_registry();
    int failures = 0;
    std::printf("%-16s %-12s %s\n", "operator", "max_rel_err", "status");
    for (const gf::GradCheckCase& c : cases) {
        gf::GradCheckReport rep = gf::run_gradcheck(c);
        std::printf("%-16s %.3e    %s\n", rep.name.c_str(), rep.max_rel_err,
                    rep.pass ? "pass" : "FAIL");
        if (!rep.pass) ++failures;
    }
    std::printf("%zu operators checked\n", cases.size());
    if (failures > 0)
        throw std::runtime_error("gradient audit failed for " + std::to_string(failures) +
                                 " operator(s)");
    return 0;
}

int cmd_attn_dump(const gf::RunConfig& cfg) {
    cfg.validate();
    if (cfg.pixel_y < 0 || cfg.pixel_x < 0)
        throw std::runtime_error("attn-dump: --pixel Y X is required");
    gf::ModelConfig mcfg = cfg.model_config();
    gf::FlowNet net(mcfg, cfg.seed);
    if (!cfg.ckpt.empty()) {
        std::vector<std::pair<std::string, gf::Tensor>> params = net.params();
        gf::load_checkpoint(cfg.ckpt, params);
    }
    ensure_out_dir(cfg);

    gf::NoGradGuard ng;
    gf::SyntheticSample s = gf::generate(gf::random_scene(cfg.seed, cfg.height, cfg.width));
    int c = mcfg.channels;
    gf::Tensor feat1 = net.encode_features(s.img1);
    gf::Tensor feat2 = net.encode_features(s.img2);
    gf::Tensor ctx = net.encode_context(s.img1);
    gf::Tensor f_c = gf::relu(gf::narrow(ctx, 0, c, c));
    int hc = feat1.dim(1), wc = feat1.dim(2);
    gf::CorrVolume corr = net.build_corr(feat1, feat2);
    gf::Tensor flow0 = gf::Tensor::zeros({2, hc, wc});
    gf::Tensor f_m = net.motion_features(net.lookup(corr, flow0), flow0);

    int k = mcfg.window;
    std::vector<std::string> written;
    auto dump = [&](gf::GgamMode mode, const std::string& name) {
        std::vector<double> win = net.ggam().attn_window_as(mode, f_c, f_m, cfg.pixel_y,
                                                            cfg.pixel_x);
        std::string path = cfg.out + "/" + name;
        gf::write_pgm(path, win, k, k);
        written.push_back(path);
    };
    if (mcfg.ggam_mode == gf::GgamMode::off) {
        // No aggregation module: only the static window exists.
        gf::GgamConfig gcfg;
        gcfg.channels = mcfg.channels;
        gcfg.window = mcfg.window;
        gcfg.sigma = mcfg.ggam_sigma;
        gcfg.mode = gf::GgamMode::smooth;
        gf::GgamModule smooth(gcfg, "dump", cfg.seed);
        std::vector<double> win =
            smooth.attn_window_as(gf::GgamMode::smooth, f_c, f_m, cfg.pixel_y, cfg.pixel_x);
        std::string path = cfg.out + "/window_smooth.pgm";
        gf::write_pgm(path, win, k, k);
        written.push_back(path);
    } else {
        dump(gf::GgamMode::smooth, "window_smooth.pgm");
        if (mcfg.ggam_mode == gf::GgamMode::ggac || mcfg.ggam_mode == gf::GgamMode::ggad)
            dump(gf::GgamMode::ggac, "window_ggac.pgm");
        if (mcfg.ggam_mode == gf::GgamMode::ggad) dump(gf::GgamMode::ggad, "window_ggad.pgm");
    }

    std::vector<gf::FlowField> preds = net.forward(s.img1, s.img2);
    std::string flow_path = cfg.out + "/flow_color.ppm";
    gf::write_ppm(flow_path, gf::flow_to_color(preds.back()));
    written.push_back(flow_path);

    for (const std::string& p : written) std::printf("wrote %s\n", p.c_str());
    return 0;
}

int cmd_gen(const gf::RunConfig& cfg) {
    cfg.validate();
    ensure_out_dir(cfg);
    for (int i = 1; i <= cfg.gen_count; ++i) {
        gf::SyntheticSample s =
            gf::generate(gf::random_scene(cfg.seed + static_cast<std::uint64_t>(i) - 1,
                                          cfg.height, cfg.width));
        char stem[64];
        std::snprintf(stem, sizeof(stem), "sample_%04d", i);
        gf::write_ppm(cfg.out + "/" + stem + "_img1.ppm", s.img1);
        gf::write_ppm(cfg.out + "/" + stem + "_img2.ppm", s.img2);
        gf::write_flo(cfg.out + "/" + stem + "_flow.flo", s.gt);
    }
    std::printf("wrote %d samples to %s\n", cfg.gen_count, cfg.out.c_str());
    return 0;
}

int run(int argc, char** argv) {
    gf::RunConfig flags;  // values parsed from the command line
    std::string config_path, preset, ggam, gcl;
    std::vector<int> pixel;
    bool print_config = false;

    CLI::App app{"Gaussian-attention optical flow workbench"};
    app.require_subcommand(0, 1);
    for (const char* name : {"train", "eval", "gradcheck", "attn-dump", "gen"})
        app.add_subcommand(name)->fallthrough();

    auto* o_config = app.add_option("--config", config_path, "config file to load");
    auto* o_preset =
        app.add_option("--preset", preset, "named preset")->check(CLI::IsMember({"toy", "sintel", "kitti"}));
    auto* o_seed = app.add_option("--seed", flags.seed, "run seed");
    auto* o_steps = app.add_option("--steps", flags.steps, "training steps");
    auto* o_ggam = app.add_option("--ggam", ggam, "aggregation mode")
                       ->check(CLI::IsMember({"off", "smooth", "ggac", "ggad"}));
    auto* o_gcl = app.add_option("--gcl", gcl, "motion-feature attention block")
                      ->check(CLI::IsMember({"on", "off"}));
    auto* o_sigma = app.add_option("--sigma", flags.sigma, "aggregation window width");
    auto* o_gcl_sigma = app.add_option("--gcl-sigma", flags.gcl_sigma, "attention mask width");
    auto* o_window = app.add_option("--window", flags.window, "window side length (odd)");
    auto* o_iters = app.add_option("--iters", flags.iters, "refinement iterations");
    auto* o_out = app.add_option("--out", flags.out, "output directory");
    auto* o_ckpt = app.add_option("--ckpt", flags.ckpt, "checkpoint path");
    auto* o_channels = app.add_option("--channels", flags.channels, "feature channels");
    auto* o_factor = app.add_option("--factor", flags.factor, "downsampling factor");
    auto* o_radius = app.add_option("--radius", flags.radius, "lookup radius");
    auto* o_heads = app.add_option("--heads", flags.heads, "attention heads");
    auto* o_lr = app.add_option("--lr", flags.lr, "peak learning rate");
    auto* o_gamma = app.add_option("--gamma", flags.gamma, "loss decay factor");
    auto* o_height = app.add_option("--height", flags.height, "training canvas height");
    auto* o_width = app.add_option("--width", flags.width, "training canvas width");
    auto* o_eh = app.add_option("--eval-height", flags.eval_height, "eval canvas height");
    auto* o_ew = app.add_option("--eval-width", flags.eval_width, "eval canvas width");
    auto* o_es = app.add_option("--eval-seeds", flags.eval_seeds, "eval corpus size");
    auto* o_ee = app.add_option("--eval-every", flags.eval_every, "steps between eval probes");
    auto* o_gc = app.add_option("--gen-count", flags.gen_count, "samples for gen");
    auto* o_pixel = app.add_option("--pixel", pixel, "query pixel Y X on the coarse grid")
                        ->expected(2);
    app.add_flag("--print-config", print_config, "print the resolved config and continue");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }

    gf::RunConfig cfg;  // defaults
    if (o_config->count()) gf::load_config_file(cfg, config_path);
    if (o_preset->count()) gf::apply_preset(cfg, preset);
    if (o_seed->count()) cfg.seed = flags.seed;
    if (o_steps->count()) cfg.steps = flags.steps;
    if (o_ggam->count()) cfg.ggam = ggam;
    if (o_gcl->count()) cfg.use_gcl = (gcl == "on");
    if (o_sigma->count()) cfg.sigma = flags.sigma;
    if (o_gcl_sigma->count()) cfg.gcl_sigma = flags.gcl_sigma;
    if (o_window->count()) cfg.window = flags.window;
    if (o_iters->count()) cfg.iters = flags.iters;
    if (o_out->count()) cfg.out = flags.out;
    if (o_ckpt->count()) cfg.ckpt = flags.ckpt;
    if (o_channels->count()) cfg.channels = flags.channels;
    if (o_factor->count()) cfg.factor = flags.factor;
    if (o_radius->count()) cfg.radius = flags.radius;
    if (o_heads->count()) cfg.heads = flags.heads;
    if (o_lr->count()) cfg.lr = flags.lr;
    if (o_gamma->count()) cfg.gamma = flags.gamma;
    if (o_height->count()) cfg.height = flags.height;
    if (o_width->count()) cfg.width = flags.width;
    if (o_eh->count()) cfg.eval_height = flags.eval_height;
    if (o_ew->count()) cfg.eval_width = flags.eval_width;
    if (o_es->count()) cfg.eval_seeds = flags.eval_seeds;
    if (o_ee->count()) cfg.eval_every = flags.eval_every;
    if (o_gc->count()) cfg.gen_count = flags.gen_count;
    if (o_pixel->count()) {
        cfg.pixel_y = pixel[0];
        cfg.pixel_x = pixel[1];
    }

    for (const auto* sub : app.get_subcommands()) cfg.command = sub->get_name();
    if (print_config) std::fputs(gf::serialize_config(cfg).c_str(), stdout);
    if (cfg.command.empty()) {
        if (print_config) return 0;
        throw std::runtime_error("no command given (train|eval|gradcheck|attn-dump|gen)");
    }

    if (cfg.command == "train") return cmd_train(cfg);
    if (cfg.command == "eval") return cmd_eval(cfg);
    if (cfg.command == "gradcheck") return cmd_gradcheck(cfg);
    if (cfg.command == "attn-dump") return cmd_attn_dump(cfg);
    return cmd_gen(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
