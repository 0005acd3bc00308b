#pragma once

// Run configuration: built-in defaults, named presets, and a flat `key = value`
// file format that round-trips losslessly.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gaussflow/flow_net.hpp"
#include "gaussflow/ggam.hpp"
#include "gaussflow/tensor.hpp"

namespace gaussflow {

struct RunConfig {
    std::string command = "";
    std::string preset = "";
    bool use_gcl = true;
    std::string ggam = "ggad";
    int window = 9;
    double sigma = 3.0;      // aggregation window width
    double gcl_sigma = 3.0;  // attention mask width
    int iters = 6;
    int factor = 4;
    int channels = 64;
    int radius = 3;
    int heads = 4;
    std::uint64_t seed = 1;
    int steps = 200;
    double lr = 2.5e-4;
    double gamma = 0.8;
    int height = 64;
    int width = 96;
    int eval_height = 0;  // 0 = same as training canvas
    int eval_width = 0;
    int eval_seeds = 100;
    int eval_every = 100;
    int gen_count = 10;
    int pixel_y = -1;  // attention query pixel on the coarse grid
    int pixel_x = -1;
    std::string out = "runs/latest";
    std::string ckpt = "";

    ModelConfig model_config() const {
        ModelConfig m;
        m.factor = factor;
        m.channels = channels;
        m.iters = iters;
        m.radius = radius;
        m.window = window;
        m.gcl_sigma = gcl_sigma;
        m.ggam_sigma = sigma;
        m.gcl_heads = heads;
        m.use_gcl = use_gcl;
        m.ggam_mode = ggam_mode_from_string(ggam);
        m.validate();
        return m;
    }

    void validate() const {
        model_config();
        if (steps < 0) throw ConfigError("config: steps must be nonnegative");
        if (lr <= 0.0) throw ConfigError("config: lr must be positive");
        if (gamma <= 0.0 || gamma >= 1.0) throw ConfigError("config: gamma must be in (0, 1)");
        if (height < factor || width < factor)
            throw ConfigError("config: canvas smaller than one coarse cell");
        if (eval_seeds < 1) throw ConfigError("config: eval_seeds must be positive");
        if (gen_count < 1) throw ConfigError("config: gen_count must be positive");
    }
};

// Named presets bundle the window size and the two width scales.
inline void apply_preset(RunConfig& cfg, const std::string& name) {
    if (name.empty()) return;
    cfg.preset = name;
    if (name == "toy") {
        cfg.window = 9;
        cfg.sigma = 3.0;
        cfg.gcl_sigma = 3.0;
    } else if (name == "sintel") {
        cfg.window = 9;
        cfg.sigma = 20.0;
        cfg.gcl_sigma = 9.0;
    } else if (name == "kitti") {
        cfg.window = 9;
        cfg.sigma = 15.0;
        cfg.gcl_sigma = 9.0;
    } else {
        throw ConfigError("config: unknown preset '" + name + "'");
    }
}

namespace config_detail {

inline std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);  // shortest text that parses back exactly
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace config_detail

// Flat key = value text; every field present so a dump is self-documenting.
inline std::string serialize_config(const RunConfig& c) {
    using config_detail::fmt_double;
    std::ostringstream ss;
    ss << "command = " << c.command << "\n";
    ss << "preset = " << c.preset << "\n";
    ss << "use_gcl = " << (c.use_gcl ? "on" : "off") << "\n";
    ss << "ggam = " << c.ggam << "\n";
    ss << "window = " << c.window << "\n";
    ss << "sigma = " << fmt_double(c.sigma) << "\n";
    ss << "gcl_sigma = " << fmt_double(c.gcl_sigma) << "\n";
    ss << "iters = " << c.iters << "\n";
    ss << "factor = " << c.factor << "\n";
    ss << "channels = " << c.channels << "\n";
    ss << "radius = " << c.radius << "\n";
    ss << "heads = " << c.heads << "\n";
    ss << "seed = " << c.seed << "\n";
    ss << "steps = " << c.steps << "\n";
    ss << "lr = " << fmt_double(c.lr) << "\n";
    ss << "gamma = " << fmt_double(c.gamma) << "\n";
    ss << "height = " << c.height << "\n";
    ss << "width = " << c.width << "\n";
    ss << "eval_height = " << c.eval_height << "\n";
    ss << "eval_width = " << c.eval_width << "\n";
    ss << "eval_seeds = " << c.eval_seeds << "\n";
    ss << "eval_every = " << c.eval_every << "\n";
    ss << "gen_count = " << c.gen_count << "\n";
    ss << "pixel_y = " << c.pixel_y << "\n";
    ss << "pixel_x = " << c.pixel_x << "\n";
    ss << "out = " << c.out << "\n";
    ss << "ckpt = " << c.ckpt << "\n";
    return ss.str();
}

inline void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
    auto to_int = [&](const std::string& v) {
        std::size_t pos = 0;
        int out = std::stoi(v, &pos);
        if (pos != v.size()) throw ConfigError("config: bad integer '" + v + "' for " + key);
        return out;
    };
    auto to_double = [&](const std::string& v) {
        std::size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw ConfigError("config: bad number '" + v + "' for " + key);
        return out;
    };
    if (key == "command") c.command = value;
    else if (key == "preset") apply_preset(c, value);
    else if (key == "use_gcl") {
        if (value == "on") c.use_gcl = true;
        else if (value == "off") c.use_gcl = false;
        else throw ConfigError("config: use_gcl must be on or off, got '" + value + "'");
    } else if (key == "ggam") {
        ggam_mode_from_string(value);  // validates
        c.ggam = value;
    } else if (key == "window") c.window = to_int(value);
    else if (key == "sigma") c.sigma = to_double(value);
    else if (key == "gcl_sigma") c.gcl_sigma = to_double(value);
    else if (key == "iters") c.iters = to_int(value);
    else if (key == "factor") c.factor = to_int(value);
    else if (key == "channels") c.channels = to_int(value);
    else if (key == "radius") c.radius = to_int(value);
    else if (key == "heads") c.heads = to_int(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "steps") c.steps = to_int(value);
    else if (key == "lr") c.lr = to_double(value);
    else if (key == "gamma") c.gamma = to_double(value);
    else if (key == "height") c.height = to_int(value);
    else if (key == "width") c.width = to_int(value);
    else if (key == "eval_height") c.eval_height = to_int(value);
    else if (key == "eval_width") c.eval_width = to_int(value);
    else if (key == "eval_seeds") c.eval_seeds = to_int(value);
    else if (key == "eval_every") c.eval_every = to_int(value);
    else if (key == "gen_count") c.gen_count = to_int(value);
    else if (key == "pixel_y") c.pixel_y = to_int(value);
    else if (key == "pixel_x") c.pixel_x = to_int(value);
    else if (key == "out") c.out = value;
    else if (key == "ckpt") c.ckpt = value;
    else throw ConfigError("config: unknown key '" + key + "'");
}

inline void parse_config_text(RunConfig& c, const std::string& text) {
    std::istringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        std::string t = config_detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " has no '='");
        apply_config_entry(c, config_detail::trim(t.substr(0, eq)),
                           config_detail::trim(t.substr(eq + 1)));
    }
}

inline void load_config_file(RunConfig& c, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    parse_config_text(c, ss.str());
}

}  // namespace gaussflow
