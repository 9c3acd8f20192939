#include "dodti/experiment.hpp"

#include "dodti/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace dodti {

std::string method_label(const MethodConfig& m) {
  switch (m.kind) {
    case MethodKind::lls: return "lls";
    case MethodKind::wlls: return "wlls";
    case MethodKind::dodti: break;
  }
  switch (m.denoiser) {
    case DenoiserKind::identity: return "dodti-identity";
    case DenoiserKind::gaussian: return "dodti-gaussian";
    case DenoiserKind::cnn: return "dodti-cnn";
  }
  return "dodti";
}

DenoiserKind parse_denoiser(const std::string& name) {
  if (name == "identity") return DenoiserKind::identity;
  if (name == "gaussian") return DenoiserKind::gaussian;
  if (name == "cnn") return DenoiserKind::cnn;
  throw UsageError("unknown denoiser '" + name + "' (expected identity, gaussian or cnn)");
}

MethodConfig parse_method(const std::string& label, MethodConfig base) {
  if (label == "lls") {
    base.kind = MethodKind::lls;
  } else if (label == "wlls") {
    base.kind = MethodKind::wlls;
  } else if (label == "dodti") {
    base.kind = MethodKind::dodti;
  } else if (label.rfind("dodti-", 0) == 0) {
    base.kind = MethodKind::dodti;
    base.denoiser = parse_denoiser(label.substr(6));
  } else {
    throw UsageError("unknown method '" + label + "'");
  }
  return base;
}

MethodConfig gaussian_method(int ns) {
  MethodConfig m;
  m.kind = MethodKind::dodti;
  m.denoiser = DenoiserKind::gaussian;
  m.unroll.ns = ns;
  m.unroll.rho = GaussianDefaults::rho;
  m.unroll.lambda = GaussianDefaults::lambda;
  m.gaussian_sigma = GaussianDefaults::sigma_voxels;
  return m;
}

MethodConfig cnn_method(std::shared_ptr<const TrainedModel> model, int ns) {
  MethodConfig m;
  m.kind = MethodKind::dodti;
  m.denoiser = DenoiserKind::cnn;
  m.unroll.ns = ns;
  m.model = std::move(model);
  return m;
}

ParamField estimate(const MethodConfig& method, const DwiStack& stack, const Mask& mask, UnrollResult* details) {
  if (method.kind != MethodKind::dodti) {
    FieldFit fit = fit_field(stack, method.kind == MethodKind::lls ? FitMethod::lls : FitMethod::wlls,
                             method.wlls_iters, mask);
    if (!fit.report.ok())
      throw FitError(fit.report.failures.front().voxel, fit.report.failures.front().message);
    return std::move(fit.field);
  }
  UnrollConfig cfg = method.unroll;
  switch (method.denoiser) {
    case DenoiserKind::identity:
      cfg.denoiser = std::make_shared<IdentityDenoiser>();
      break;
    case DenoiserKind::gaussian:
      cfg.denoiser = std::make_shared<GaussianDenoiser>(method.gaussian_sigma);
      break;
    case DenoiserKind::cnn:
      if (!method.model) throw UsageError("the cnn denoiser needs trained weights");
      cfg.denoiser = std::make_shared<CnnDenoiser>(method.model->weights);
      cfg.rho = method.model->rho;
      cfg.lambda = method.model->lambda;
      break;
  }
  cfg.record_trace = details != nullptr;
  UnrollResult result;
  ParamField field = run_unroll_field(stack, cfg, mask, &result);
  if (!result.report.ok())
    throw FitError(result.report.failures.front().voxel, result.report.failures.front().message);
  if (details) *details = std::move(result);
  return field;
}

ExperimentAxis parse_axis(const std::string& name) {
  if (name == "bvalue") return ExperimentAxis::bvalue;
  if (name == "directions6") return ExperimentAxis::directions6;
  if (name == "ndw") return ExperimentAxis::ndw;
  if (name == "noise") return ExperimentAxis::noise;
  if (name == "varnoise") return ExperimentAxis::varnoise;
  throw UsageError("unknown experiment axis '" + name + "'");
}

std::string to_string(ExperimentAxis axis) {
  switch (axis) {
    case ExperimentAxis::bvalue: return "bvalue";
    case ExperimentAxis::directions6: return "directions6";
    case ExperimentAxis::ndw: return "ndw";
    case ExperimentAxis::noise: return "noise";
    case ExperimentAxis::varnoise: return "varnoise";
  }
  return "?";
}

namespace {

std::string number_label(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

}  // namespace

std::vector<AxisPoint> axis_points(const ExperimentConfig& cfg) {
  AxisPoint base;
  base.scheme.kind = SchemeKind::dsm6;
  base.scheme.b = cfg.b;
  base.noise.kind = NoiseKind::stationary;
  base.noise.sigma = cfg.sigma;
  base.noise.seed = cfg.noise_seed;

  std::vector<AxisPoint> pts;
  auto values_or = [&](std::vector<double> fallback) { return cfg.values.empty() ? fallback : cfg.values; };
  switch (cfg.axis) {
    case ExperimentAxis::bvalue:
      for (double b : values_or({800, 1000, 1200})) {
        AxisPoint p = base;
        p.scheme.b = b;
        p.value = b;
        p.label = number_label(b);
        pts.push_back(p);
      }
      break;
    case ExperimentAxis::directions6: {
      int i = 0;
      for (double rot : {0.0, 30.0, 60.0, 90.0}) {
        AxisPoint p = base;
        p.scheme.rotation_deg_z = rot;
        p.value = i++;
        p.label = rot == 0 ? "DSM" : "DSM-rot" + number_label(rot);
        pts.push_back(p);
      }
      AxisPoint p = base;
      p.scheme.kind = SchemeKind::jones6;
      p.value = i;
      p.label = "Jones";
      pts.push_back(p);
      break;
    }
    case ExperimentAxis::ndw:
      for (double n : values_or({7, 15, 25, 36})) {
        AxisPoint p = base;
        p.scheme.kind = SchemeKind::jones_n;
        p.scheme.n_dw = int(n);
        p.value = n;
        p.label = number_label(n);
        pts.push_back(p);
      }
      break;
    case ExperimentAxis::noise:
      for (double s : values_or({0.01, 0.02, 0.03, 0.04})) {
        AxisPoint p = base;
        p.noise.sigma = s;
        p.value = s;
        p.label = number_label(s);
        pts.push_back(p);
      }
      break;
    case ExperimentAxis::varnoise: {
      AxisPoint p = base;
      p.noise.kind = NoiseKind::radial_linear;
      p.noise.sigma_outer = 0.01;
      p.noise.sigma_inner = 0.04;
      p.value = 0;
      p.label = "radial 0.01-0.04";
      pts.push_back(p);
      break;
    }
  }
  return pts;
}

std::vector<double> ExperimentResult::series(const std::string& method, const std::string& map) const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.method == method && r.map == map) out.push_back(r.error.empty() ? r.nrmse : std::numeric_limits<double>::quiet_NaN());
  return out;
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  try {
    ExperimentConfig cfg;
    cfg.axis = parse_axis(j.at("axis").get<std::string>());
    if (j.contains("dims")) {
      const auto d = j.at("dims").get<std::vector<int>>();
      if (d.size() != 3) throw UsageError("experiment dims must have three entries");
      cfg.dims = {d[0], d[1], d[2]};
    }
    cfg.phantom_seed = j.value("seed", cfg.phantom_seed);
    cfg.noise_seed = j.value("noise_seed", cfg.phantom_seed);
    cfg.b = j.value("b", cfg.b);
    cfg.sigma = j.value("sigma", cfg.sigma);
    cfg.values = j.value("values", std::vector<double>{});
    cfg.plots = j.value("plots", true);
    if (j.contains("out")) cfg.out_dir = base_dir / j.at("out").get<std::string>();

    const int ns = j.value("ns", 8);
    std::shared_ptr<const TrainedModel> model;
    if (j.contains("weights"))
      model = std::make_shared<TrainedModel>(load_checkpoint(base_dir / j.at("weights").get<std::string>()));
    const auto& g = j.value("gaussian", nlohmann::json::object());
    for (const auto& name : j.value("methods", std::vector<std::string>{"lls", "wlls"})) {
      MethodConfig m = parse_method(name);
      m.unroll.ns = ns;
      if (m.kind == MethodKind::dodti && m.denoiser == DenoiserKind::gaussian) {
        m = gaussian_method(ns);
        m.gaussian_sigma = g.value("sigma", m.gaussian_sigma);
        m.unroll.rho = g.value("rho", m.unroll.rho);
        m.unroll.lambda = g.value("lambda", m.unroll.lambda);
      } else if (m.kind == MethodKind::dodti && m.denoiser == DenoiserKind::cnn) {
        if (!model) throw UsageError("method dodti-cnn needs \"weights\" in the experiment config");
        m = cnn_method(model, ns);
      } else if (m.kind == MethodKind::dodti) {
        m.unroll.rho = j.value("rho", m.unroll.rho);
        m.unroll.lambda = j.value("lambda", m.unroll.lambda);
      }
      cfg.methods.push_back(m);
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad experiment config: ") + e.what());
  }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.methods.empty()) throw UsageError("experiment has no methods");
  const Phantom phantom = make_phantom(cfg.dims, cfg.phantom_seed);
  const ScalarMaps ref = scalar_maps(phantom.gt);
  const Mask& mask = phantom.gt.mask;
  ExperimentResult result;
  const char* maps[] = {"FA", "MD", "AD", "RD"};
  for (const auto& pt : axis_points(cfg)) {
    const SimulatedData sim = simulate(phantom, make_scheme(pt.scheme), pt.noise);
    for (const auto& m : cfg.methods) {
      ExperimentRow row;
      row.axis = to_string(cfg.axis);
      row.label = pt.label;
      row.value = pt.value;
      row.method = method_label(m);
      try {
        const ParamField est = estimate(m, sim.noisy, mask);
        const MetricReport rep = evaluate_maps(scalar_maps(est), ref, mask);
        for (const char* name : maps) {
          row.map = name;
          row.nrmse = rep[name].nrmse;
          row.ssim = rep[name].ssim;
          result.rows.push_back(row);
        }
      } catch (const Error& e) {
        row.error = e.what();
        row.nrmse = row.ssim = std::numeric_limits<double>::quiet_NaN();
        for (const char* name : maps) {
          row.map = name;
          result.rows.push_back(row);
        }
      }
    }
  }
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_experiment_csv(result, cfg.out_dir / ("experiment_" + to_string(cfg.axis) + ".csv"));
    if (cfg.plots)
      for (const char* name : {"FA", "MD"})
        for (const char* metric : {"nrmse", "ssim"})
          write_experiment_svg(result, name, metric,
                               cfg.out_dir / (to_string(cfg.axis) + "_" + name + "_" + metric + ".svg"));
  }
  return result;
}

void write_experiment_csv(const ExperimentResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(10);
  out << "axis,label,value,method,map,nrmse,ssim,error\n";
  for (const auto& r : result.rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    out << r.axis << "," << r.label << "," << r.value << "," << r.method << "," << r.map << "," << r.nrmse << ","
        << r.ssim << "," << err << "\n";
  }
}

void write_experiment_svg(const ExperimentResult& result, const std::string& map, const std::string& metric,
                          const std::filesystem::path& path) {
  std::vector<std::string> labels, methods;
  std::map<std::string, std::vector<double>> series;
  for (const auto& r : result.rows) {
    if (r.map != map) continue;
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);
    if (!series.count(r.method)) methods.push_back(r.method);
    series[r.method].push_back(metric == "ssim" ? r.ssim : r.nrmse);
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [_, ys] : series)
    for (double y : ys)
      if (std::isfinite(y)) lo = std::min(lo, y), hi = std::max(hi, y);
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) hi = lo + 1e-12;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  const double W = 640, H = 400, L = 70, R = 170, T = 40, B = 50;
  const auto px = [&](std::size_t i) {
    return labels.size() < 2 ? L + (W - L - R) / 2 : L + (W - L - R) * double(i) / double(labels.size() - 1);
  };
  const auto py = [&](double y) { return T + (H - T - B) * (1 - (y - lo) / (hi - lo)); };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << L << "\" y=\"24\" font-size=\"14\">" << map << " " << metric << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = lo + (hi - lo) * k / 4;
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << number_label(std::round(y * 1e4) / 1e4)
        << "</text>\n";
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    out << "<text x=\"" << px(i) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << labels[i] << "</text>\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const char* c = colors[m % 6];
    const auto& ys = series[methods[m]];
    out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i)
      if (std::isfinite(ys[i])) out << px(i) << "," << py(ys[i]) << " ";
    out << "\"/>\n";
    for (std::size_t i = 0; i < ys.size(); ++i)
      if (std::isfinite(ys[i])) out << "<circle cx=\"" << px(i) << "\" cy=\"" << py(ys[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    out << "<text x=\"" << W - R + 12 << "\" y=\"" << T + 18 * double(m + 1) << "\" fill=\"" << c << "\">" << methods[m]
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace dodti
