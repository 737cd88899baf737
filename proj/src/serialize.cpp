#include "tdmix/serialize.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tdmix/errors.hpp"

namespace tdmix::serialize {

std::string double_to_hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

double double_from_hex(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

json doubles_to_hex(std::span<const double> xs) {
    json arr = json::array();
    for (double x : xs) arr.push_back(double_to_hex(x));
    return arr;
}

std::vector<double> doubles_from_hex(const json& j) {
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& item : j) out.push_back(double_from_hex(item.get<std::string>()));
    return out;
}

json kernel_to_json(const chain::TransitionKernel& kernel) {
    json j;
    j["n_states"] = kernel.n_states();
    j["P"] = doubles_to_hex(kernel.p().data);
    j["rewards"] = doubles_to_hex(kernel.rewards());
    j["r_max"] = kernel.r_max();
    j["kind"] = kernel.kind();
    j["params"] = json::object();
    return j;
}

chain::TransitionKernel kernel_from_json(const json& j) {
    auto n = j.at("n_states").get<std::size_t>();
    Mat p(n, n);
    p.data = doubles_from_hex(j.at("P"));
    if (p.data.size() != n * n) throw DimensionMismatch("kernel JSON has wrong P size");
    auto rewards = doubles_from_hex(j.at("rewards"));
    bool allow_periodic = j.value("allow_periodic", false);
    return chain::TransitionKernel::make(std::move(p), std::move(rewards),
                                         j.at("r_max").get<double>(),
                                         j.value("kind", "matrix"), allow_periodic);
}

json model_to_json(const approx::ValueModel& model) {
    json j;
    if (const auto* lin = std::get_if<approx::LinearModel>(&model)) {
        j["kind"] = "linear";
        j["n_states"] = lin->features.n_states();
        j["d"] = lin->features.dim();
        j["phi"] = doubles_to_hex(lin->features.phi.data);
        j["c_phi"] = lin->features.c_phi;
        j["c_gamma"] = lin->features.c_gamma;
        j["holder_gamma"] = lin->features.holder_gamma;
        j["theta"] = doubles_to_hex(lin->theta);
        return j;
    }
    const auto& net = std::get<approx::ReluNetwork>(model);
    j["kind"] = "relu";
    j["n_states"] = net.n_states();
    j["widths"] = net.widths();
    j["B"] = double_to_hex(net.spectral_budget());
    j["x_max"] = double_to_hex(net.x_max());
    j["embedding"] = net.embedding() == approx::Embedding::OneHot ? "onehot" : "coord";
    j["with_bias"] = net.with_bias();
    j["weights"] = doubles_to_hex(net.params());
    return j;
}

approx::ValueModel model_from_json(const json& j) {
    auto kind = j.at("kind").get<std::string>();
    if (kind == "linear") {
        approx::LinearModel lin;
        auto n = j.at("n_states").get<std::size_t>();
        auto d = j.at("d").get<std::size_t>();
        lin.features.phi = Mat(n, d);
        lin.features.phi.data = doubles_from_hex(j.at("phi"));
        lin.features.c_phi = j.at("c_phi").get<double>();
        lin.features.c_gamma = j.at("c_gamma").get<double>();
        lin.features.holder_gamma = j.at("holder_gamma").get<double>();
        lin.theta = doubles_from_hex(j.at("theta"));
        if (lin.theta.size() != d) throw DimensionMismatch("model JSON theta size mismatch");
        return lin;
    }
    if (kind != "relu") throw InvalidParameter("unknown model kind: " + kind);
    auto widths = j.at("widths").get<std::vector<std::size_t>>();
    approx::ReluNetwork net(j.at("n_states").get<std::size_t>(),
                            j.at("embedding").get<std::string>() == "onehot"
                                ? approx::Embedding::OneHot
                                : approx::Embedding::Coord,
                            widths, double_from_hex(j.at("B").get<std::string>()),
                            double_from_hex(j.at("x_max").get<std::string>()),
                            j.value("with_bias", true));
    auto weights = doubles_from_hex(j.at("weights"));
    if (weights.size() != net.param_dim()) throw DimensionMismatch("model JSON weight size mismatch");
    std::copy(weights.begin(), weights.end(), net.params().begin());
    return net;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << content;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("missing artifact: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const std::filesystem::path& path) { return json::parse(read_text(path)); }

void write_json(const std::filesystem::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_trajectory_csv(const std::filesystem::path& path, const chain::Trajectory& traj) {
    std::ostringstream out;
    out << "t,state,reward\n";
    for (std::size_t t = 0; t + 1 < traj.states.size(); ++t)
        out << t << ',' << traj.states[t] << ',' << format_double(traj.rewards[t]) << '\n';
    out << (traj.states.size() - 1) << ',' << traj.states.back() << ",\n";
    write_text(path, out.str());
}

void write_history_csv(const std::filesystem::path& path, const td::IterateHistory& history,
                       const std::vector<double>& err_at_checkpoints) {
    std::ostringstream out;
    out << "t,alpha,delta,err\n";
    // err is known at checkpoints only; scalar streams at every step.
    std::size_t cp = 0;
    for (std::size_t t = 1; t <= history.steps(); ++t) {
        out << t << ',' << format_double(history.alphas[t - 1]) << ','
            << format_double(history.deltas[t - 1]) << ',';
        if (cp < history.checkpoints.size() && history.checkpoints[cp].t == t) {
            if (cp < err_at_checkpoints.size()) out << format_double(err_at_checkpoints[cp]);
            ++cp;
        }
        out << '\n';
    }
    write_text(path, out.str());
}

void write_checkpoints_json(const std::filesystem::path& path, const td::IterateHistory& history) {
    json j;
    j["seed"] = history.seed;
    j["discount"] = history.discount;
    j["model_kind"] = history.model_kind;
    j["schedule"] = {{"c_alpha", history.schedule.c_alpha}, {"eta", history.schedule.eta}};
    json cps = json::array();
    for (const auto& cp : history.checkpoints)
        cps.push_back({{"t", cp.t}, {"theta", doubles_to_hex(cp.theta)}});
    j["checkpoints"] = cps;
    write_json(path, j);
}

void write_decomposition_csv(const std::filesystem::path& path, const decomp::Decomposition& d) {
    std::ostringstream out;
    out << "t,err,norm_M,norm_R\n";
    for (std::size_t i = 0; i < d.ts.size(); ++i)
        out << d.ts[i] << ',' << format_double(d.err[i]) << ',' << format_double(d.norm_m[i])
            << ',' << format_double(d.norm_r[i]) << '\n';
    write_text(path, out.str());
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& headers,
               const std::vector<std::vector<double>>& columns) {
    std::ostringstream out;
    for (std::size_t c = 0; c < headers.size(); ++c)
        out << headers[c] << (c + 1 < headers.size() ? ',' : '\n');
    if (!columns.empty()) {
        for (std::size_t r = 0; r < columns.front().size(); ++r) {
            for (std::size_t c = 0; c < columns.size(); ++c)
                out << format_double(columns[c][r]) << (c + 1 < columns.size() ? ',' : '\n');
        }
    }
    write_text(path, out.str());
}

std::string file_checksum(const std::filesystem::path& path) {
    std::string content = read_text(path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : content) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
    return buf;
}

void write_loglog_svg(const std::filesystem::path& path, const std::vector<SvgSeries>& series,
                      const std::vector<double>& reference_slopes, const std::string& title) {
    const double width = 720, height = 480, margin = 60;
    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            if (!(s.xs[i] > 0.0) || !(s.ys[i] > 0.0)) continue;
            min_x = std::min(min_x, s.xs[i]);
            max_x = std::max(max_x, s.xs[i]);
            min_y = std::min(min_y, s.ys[i]);
            max_y = std::max(max_y, s.ys[i]);
        }
    if (min_x >= max_x || min_y >= max_y) {
        write_text(path, "<svg xmlns='http://www.w3.org/2000/svg'/>\n");
        return;
    }
    auto px = [&](double x) {
        return margin + (std::log(x) - std::log(min_x)) / (std::log(max_x) - std::log(min_x)) *
                            (width - 2 * margin);
    };
    auto py = [&](double y) {
        return height - margin -
               (std::log(y) - std::log(min_y)) / (std::log(max_y) - std::log(min_y)) *
                   (height - 2 * margin);
    };

    std::ostringstream out;
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << width / 2 << "' y='24' text-anchor='middle' font-size='14'>" << title
        << "</text>\n";
    out << "<line x1='" << margin << "' y1='" << height - margin << "' x2='" << width - margin
        << "' y2='" << height - margin << "' stroke='black'/>\n";
    out << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
        << height - margin << "' stroke='black'/>\n";

    const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::size_t color_idx = 0;
    for (const auto& s : series) {
        std::string color = s.color.empty() ? palette[color_idx % 5] : s.color;
        ++color_idx;
        out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            if (!(s.xs[i] > 0.0) || !(s.ys[i] > 0.0)) continue;
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(s.xs[i]), py(s.ys[i]));
            out << buf;
        }
        out << "'/>\n";
        out << "<text x='" << width - margin + 4 << "' y='"
            << margin + 16.0 * static_cast<double>(color_idx) << "' font-size='11' fill='" << color
            << "'>" << s.name << "</text>\n";
    }
    // slope guides through the first plotted point
    if (!series.empty() && !series.front().xs.empty() && series.front().xs.front() > 0.0 &&
        series.front().ys.front() > 0.0) {
        double x0 = series.front().xs.front(), y0 = series.front().ys.front();
        for (double slope : reference_slopes) {
            double x1 = max_x;
            double y1 = y0 * std::pow(x1 / x0, -slope);
            char buf[128];
            std::snprintf(buf, sizeof(buf),
                          "<line x1='%.2f' y1='%.2f' x2='%.2f' y2='%.2f' stroke='gray' "
                          "stroke-dasharray='4,3'/>\n",
                          px(x0), py(y0), px(x1), py(std::max(y1, min_y)));
            out << buf;
        }
    }
    out << "</svg>\n";
    write_text(path, out.str());
}

}  // namespace tdmix::serialize
