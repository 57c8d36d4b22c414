#include "irrcast/ncde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace irrcast {

NcdeParams NcdeParams::init(const NcdeConfig& config, Rng& rng) {
    NcdeParams p;
    p.config = config;
    const auto w = config.hidden_width;
    const auto h = config.field_hidden;
    const auto ch = config.channels;
    p.field_w1 = Tensor::xavier(w, h, rng);
    p.field_b1 = Tensor::parameter({h}, std::vector<double>(static_cast<std::size_t>(h), 0.0));
    p.field_w2 = Tensor::xavier(h, w * ch, rng);
    p.field_b2 =
        Tensor::parameter({w * ch}, std::vector<double>(static_cast<std::size_t>(w * ch), 0.0));
    p.init_w = Tensor::xavier(ch, w, rng);
    p.init_b = Tensor::parameter({w}, std::vector<double>(static_cast<std::size_t>(w), 0.0));
    return p;
}

std::vector<Tensor> NcdeParams::parameters() const {
    return {field_w1, field_b1, field_w2, field_b2, init_w, init_b};
}

void NcdeParams::set_requires_grad(bool on) {
    for (auto& t : parameters()) t.data_ptr()->requires_grad = on;
}

Tensor NcdeParams::field(const Tensor& state) const {
    Tensor h = tanh(add_rowvec(matmul(state, field_w1), field_b1));
    Tensor out = tanh(add_rowvec(matmul(h, field_w2), field_b2)); // bounded vector field
    return reshape(out, {config.hidden_width, config.channels});
}

Tensor NcdeParams::initial_state(const std::vector<double>& features0) const {
    if (static_cast<std::int64_t>(features0.size()) != config.channels)
        throw ShapeMismatch("ncde initial_state: feature width " +
                            std::to_string(features0.size()));
    Tensor d0 = Tensor::from({1, config.channels}, features0);
    return add_rowvec(matmul(d0, init_w), init_b);
}

namespace {

void check_state_finite(const Tensor& state) {
    for (double v : state.values())
        if (!std::isfinite(v) || std::abs(v) > 1e6)
            throw NonFiniteState("cde_solve: hidden state diverged");
}

// field(p) * D'(s) as a [1,w] tensor; D'(s) enters as a constant column.
Tensor control_step(const CdeField& field, const SplinePath& path, const Tensor& state,
                    double s, std::vector<double>& deriv_buf) {
    path.derivative_into(s, deriv_buf);
    Tensor ddt =
        Tensor::from({static_cast<std::int64_t>(deriv_buf.size()), 1}, deriv_buf);
    Tensor f = field(state);
    if (f.rank() != 2 || f.dim(1) != static_cast<std::int64_t>(deriv_buf.size()))
        throw ShapeMismatch("cde_solve: field output " + shape_str(f.shape()) + " vs " +
                            std::to_string(deriv_buf.size()) + " control channels");
    Tensor dp = matmul(f, ddt); // [w,1]
    return transpose(dp);       // [1,w]
}

} // namespace

std::vector<Tensor> cde_solve(const CdeField& field, const SplinePath& path, const Tensor& p0,
                              const std::vector<double>& query_times, int substeps) {
    if (substeps < 1) throw BadParams("cde_solve: substeps must be >= 1");
    if (query_times.empty()) throw BadParams("cde_solve: no query times");
    for (std::size_t i = 1; i < query_times.size(); ++i)
        if (!(query_times[i] > query_times[i - 1]))
            throw NonMonotonicKnots("cde_solve: query times must increase");

    std::vector<Tensor> states;
    states.reserve(query_times.size());
    Tensor p = p0;
    check_state_finite(p);
    states.push_back(p);

    std::vector<double> deriv_buf;
    for (std::size_t qi = 1; qi < query_times.size(); ++qi) {
        const double from = query_times[qi - 1];
        const double to = query_times[qi];
        const double h = (to - from) / static_cast<double>(substeps);
        for (int step = 0; step < substeps; ++step) {
            const double s = from + h * static_cast<double>(step);
            Tensor k1 = control_step(field, path, p, s, deriv_buf);
            Tensor k2 = control_step(field, path, add(p, scale(k1, h / 2.0)), s + h / 2.0,
                                     deriv_buf);
            Tensor k3 = control_step(field, path, add(p, scale(k2, h / 2.0)), s + h / 2.0,
                                     deriv_buf);
            Tensor k4 = control_step(field, path, add(p, scale(k3, h)), s + h, deriv_buf);
            Tensor incr = add(add(k1, k4), scale(add(k2, k3), 2.0));
            p = add(p, scale(incr, h / 6.0));
            check_state_finite(p);
        }
        states.push_back(p);
    }
    return states;
}

Tensor ncde_pe_forward(const NcdeParams& params, const std::vector<double>& times,
                       const std::vector<TimeFeatureVector>& features) {
    if (times.size() < 2) throw TooFewKnots("ncde_pe_forward: need >= 2 observations");
    if (times.size() != features.size())
        throw ShapeMismatch("ncde_pe_forward: times/features length");

    std::vector<std::vector<double>> knot_values;
    knot_values.reserve(features.size());
    for (const auto& f : features) {
        auto arr = f.as_array();
        knot_values.emplace_back(arr.begin(), arr.end());
    }
    SplinePath path = natural_cubic_spline(times, knot_values);

    Tensor p0 = params.initial_state(knot_values.front());
    CdeField field = [&params](const Tensor& s) { return params.field(s); };
    std::vector<Tensor> states = cde_solve(field, path, p0, times, params.config.substeps);
    return concat_rows(states);
}

// --- PE table -------------------------------------------------------------------

std::vector<double> PETable::lookup(double t) const {
    if (grid_times.empty()) throw EmptyDataset("pe_table_lookup: empty table");
    if (grid_times.size() == 1 || t <= grid_times.front()) return grid_values.front();
    if (t >= grid_times.back()) return grid_values.back();
    const auto it = std::upper_bound(grid_times.begin(), grid_times.end(), t);
    const auto hi = static_cast<std::size_t>(std::distance(grid_times.begin(), it));
    const auto lo = hi - 1;
    const double t0 = grid_times[lo], t1 = grid_times[hi];
    const double w1 = (t - t0) / (t1 - t0);
    const double w0 = 1.0 - w1;
    std::vector<double> out(grid_values[lo].size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = w0 * grid_values[lo][i] + w1 * grid_values[hi][i];
    return out;
}

PETable pe_table_build(const NcdeParams& params, double t_start, double t_end, double resolution,
                       const std::function<TimeFeatureVector(double)>& features_at) {
    if (resolution <= 0.0) throw BadParams("pe_table_build: resolution must be > 0");
    if (t_end < t_start) throw BadParams("pe_table_build: span end before start");

    PETable table;
    table.t_start = t_start;
    table.t_end = t_end;
    table.resolution = resolution;

    const auto count =
        1 + static_cast<std::size_t>(std::floor((t_end - t_start) / resolution + 1e-12));
    for (std::size_t i = 0; i < count; ++i)
        table.grid_times.push_back(t_start + static_cast<double>(i) * resolution);

    if (table.grid_times.size() == 1) {
        // degenerate span: evaluate the initial state only
        const auto arr = features_at(t_start).as_array();
        Tensor p0 = params.initial_state(std::vector<double>(arr.begin(), arr.end()));
        table.grid_values.emplace_back(p0.values().begin(), p0.values().end());
        return table;
    }

    std::vector<TimeFeatureVector> features;
    features.reserve(table.grid_times.size());
    for (double t : table.grid_times) features.push_back(features_at(t));

    Tensor rows = ncde_pe_forward(params, table.grid_times, features);
    const auto w = rows.dim(1);
    for (std::int64_t i = 0; i < rows.dim(0); ++i) {
        std::vector<double> row(static_cast<std::size_t>(w));
        for (std::int64_t j = 0; j < w; ++j) row[static_cast<std::size_t>(j)] = rows.at(i, j);
        table.grid_values.push_back(std::move(row));
    }
    return table;
}

void PETable::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    f << "ctlpe-petable v1 " << fmt(resolution) << " " << fmt(t_start) << " " << fmt(t_end)
      << " " << width() << "\n";
    for (std::size_t i = 0; i < grid_times.size(); ++i) {
        f << fmt(grid_times[i]);
        for (double v : grid_values[i]) f << " " << fmt(v);
        f << "\n";
    }
    if (!f) throw IoError("short write to " + path);
}

PETable PETable::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string magic, version;
    PETable table;
    std::int64_t w = 0;
    f >> magic >> version >> table.resolution >> table.t_start >> table.t_end >> w;
    if (!f || magic != "ctlpe-petable" || version != "v1")
        throw ParseError("bad pe-table header in " + path);
    double t;
    while (f >> t) {
        std::vector<double> row(static_cast<std::size_t>(w));
        for (auto& v : row)
            if (!(f >> v)) throw ParseError("truncated pe-table row in " + path);
        table.grid_times.push_back(t);
        table.grid_values.push_back(std::move(row));
    }
    return table;
}

} // namespace irrcast
