#include "lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace flab::lab {

using nlohmann::json;

int Table::col(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  require(it != columns.end(), ErrorCode::kIo, "missing column '" + name + "'");
  return static_cast<int>(it - columns.begin());
}

double Table::num(std::size_t row, const std::string& name) const {
  const std::string& cell = rows.at(row).at(static_cast<std::size_t>(col(name)));
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  require(!cell.empty() && end == cell.c_str() + cell.size(), ErrorCode::kIo,
          "non-numeric cell '" + cell + "' in column " + name);
  return v;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot read " + path.string());
  Table t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kIo, path.string() + " is empty");
  t.columns = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line);
    require(row.size() == t.columns.size(), ErrorCode::kIo, path.string() + ": ragged row '" + line + "'");
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace {

const std::vector<std::string> kUnitFiles = {"config.json",    "training.csv", "ground_truth.csv",
                                             "cev.csv",        "kstar.csv",    "regression.csv",
                                             "overlap.csv",    "additivity.csv", "attribution.csv"};

const char* const kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

std::string fmt(double v, int prec = 4) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

int kstar_from_curve(const std::vector<double>& cev, double p) {
  for (std::size_t j = 0; j < cev.size(); ++j) {
    if (cev[j] >= p - 1e-12) return static_cast<int>(j) + 1;
  }
  return static_cast<int>(cev.size());
}

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::string color;
  bool dashed = false;
  double width = 1.8;
};

struct Bar {
  double x = 0.0;
  std::vector<double> parts;  // stacked, one per factor
};

// Small static line/bar chart writer. log_x uses log10(1 + x) so step 0 fits.
class Plot {
 public:
  Plot(std::string title, std::string xlabel, std::string ylabel)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

  bool log_x = false;
  std::optional<std::pair<double, double>> y_range;
  std::vector<Series> series;
  std::vector<Bar> bars;
  std::vector<std::string> bar_names;

  void write(const fs::path& path) const {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    auto see = [&](double x, double y) {
      if (!std::isfinite(x) || !std::isfinite(y)) return;
      x0 = std::min(x0, tx(x));
      x1 = std::max(x1, tx(x));
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    };
    for (const auto& s : series)
      for (std::size_t i = 0; i < s.x.size(); ++i) see(s.x[i], s.y[i]);
    for (const auto& b : bars) {
      double tot = 0.0;
      for (double v : b.parts) tot += v;
      see(b.x - 0.5, 0.0);
      see(b.x + 0.5, tot);
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (y_range) std::tie(y0, y1) = *y_range;
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    const double pad = 0.04 * (y1 - y0);
    if (!y_range) y0 -= pad, y1 += pad;

    const double W = 640, H = 400, l = 70, r = 170, t = 40, b = 55;
    const double pw = W - l - r, ph = H - t - b;
    auto px = [&](double x) { return l + (tx(x) - x0) / (x1 - x0) * pw; };
    auto pxt = [&](double xt) { return l + (xt - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return t + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << l + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title_)
       << "</text>\n";
    os << "<rect x=\"" << l << "\" y=\"" << t << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#333\"/>\n";

    for (double v : ticks(y0, y1)) {
      os << "<line x1=\"" << l - 4 << "\" x2=\"" << l << "\" y1=\"" << py(v) << "\" y2=\"" << py(v)
         << "\" stroke=\"#333\"/><text x=\"" << l - 7 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">"
         << fmt(v) << "</text>\n";
    }
    if (log_x) {
      for (double d = 1; d <= std::pow(10.0, x1) + 1; d *= 10) {
        const double xt = std::log10(1.0 + (d == 1 ? 0.0 : d));
        if (xt < x0 - 1e-9 || xt > x1 + 1e-9) continue;
        os << "<line x1=\"" << pxt(xt) << "\" x2=\"" << pxt(xt) << "\" y1=\"" << t + ph << "\" y2=\"" << t + ph + 4
           << "\" stroke=\"#333\"/><text x=\"" << pxt(xt) << "\" y=\"" << t + ph + 17 << "\" text-anchor=\"middle\">"
           << (d == 1 ? std::string("0") : fmt(d)) << "</text>\n";
      }
    } else {
      for (double v : ticks(x0, x1)) {
        os << "<line x1=\"" << pxt(v) << "\" x2=\"" << pxt(v) << "\" y1=\"" << t + ph << "\" y2=\"" << t + ph + 4
           << "\" stroke=\"#333\"/><text x=\"" << pxt(v) << "\" y=\"" << t + ph + 17 << "\" text-anchor=\"middle\">"
           << fmt(v) << "</text>\n";
      }
    }
    os << "<text x=\"" << l + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape(xlabel_)
       << "</text>\n";
    os << "<text transform=\"translate(16," << t + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << escape(ylabel_) << "</text>\n";

    for (const auto& bar : bars) {
      double base = 0.0;
      for (std::size_t k = 0; k < bar.parts.size(); ++k) {
        const double top = base + bar.parts[k];
        os << "<rect x=\"" << px(bar.x - 0.4) << "\" y=\"" << py(top) << "\" width=\"" << px(bar.x + 0.4) - px(bar.x - 0.4)
           << "\" height=\"" << std::max(0.0, py(base) - py(top)) << "\" fill=\"" << kPalette[k % 10] << "\"/>\n";
        base = top;
      }
    }
    for (const auto& s : series) {
      std::ostringstream pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.y[i])) continue;
        pts << px(s.x[i]) << ',' << py(std::clamp(s.y[i], y0, y1)) << ' ';
      }
      os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"" << s.width << "\""
         << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"" << pts.str() << "\"/>\n";
    }

    double ly = t + 8;
    for (const auto& s : series) {
      if (s.name.empty()) continue;
      os << "<line x1=\"" << l + pw + 12 << "\" x2=\"" << l + pw + 36 << "\" y1=\"" << ly << "\" y2=\"" << ly
         << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6,4\"" : "")
         << "/><text x=\"" << l + pw + 42 << "\" y=\"" << ly + 4 << "\">" << escape(s.name) << "</text>\n";
      ly += 18;
    }
    for (std::size_t k = 0; k < bar_names.size(); ++k) {
      os << "<rect x=\"" << l + pw + 12 << "\" y=\"" << ly - 6 << "\" width=\"24\" height=\"10\" fill=\""
         << kPalette[k % 10] << "\"/><text x=\"" << l + pw + 42 << "\" y=\"" << ly + 4 << "\">"
         << escape(bar_names[k]) << "</text>\n";
      ly += 18;
    }
    os << "</svg>\n";
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
    out << os.str();
  }

 private:
  double tx(double x) const { return log_x ? std::log10(1.0 + std::max(0.0, x)) : x; }

  static std::vector<double> ticks(double lo, double hi) {
    const double raw = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
      if (m * mag >= raw) {
        step = m * mag;
        break;
      }
    }
    std::vector<double> out;
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
    return out;
  }

  std::string title_, xlabel_, ylabel_;
};

std::string gradient(std::size_t i, std::size_t n) {
  const double f = n <= 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(n - 1);
  const int r = static_cast<int>(200 - 170 * f), g = static_cast<int>(220 - 130 * f), b = static_cast<int>(255 - 75 * f);
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

ExperimentConfig unit_config(const fs::path& dir) { return load_config(dir / "config.json"); }

std::map<int, std::vector<double>> curves_by_step(const Table& cev) {
  std::map<int, std::vector<double>> out;
  for (std::size_t i = 0; i < cev.rows.size(); ++i) {
    out[static_cast<int>(cev.num(i, "step"))].push_back(cev.num(i, "cev"));
  }
  return out;
}

std::map<std::string, std::vector<double>> ground_truth_curves(const Table& gt) {
  std::map<std::string, std::vector<double>> out;
  const int kind = gt.col("kind");
  for (std::size_t i = 0; i < gt.rows.size(); ++i) out[gt.rows[i][static_cast<std::size_t>(kind)]].push_back(gt.num(i, "cev"));
  return out;
}

std::map<int, double> mean_overlap_by_step(const Table& ov) {
  std::map<int, std::pair<double, int>> acc;
  for (std::size_t i = 0; i < ov.rows.size(); ++i) {
    auto& a = acc[static_cast<int>(ov.num(i, "step"))];
    a.first += ov.num(i, "score");
    ++a.second;
  }
  std::map<int, double> out;
  for (const auto& [s, a] : acc) out[s] = a.first / a.second;
  return out;
}

void report_unit(const fs::path& dir, const fs::path& out) {
  fs::create_directories(out);
  const auto cfg = unit_config(dir);
  const double p = cfg.analysis.cev_p;
  const ComposedProcess proc(cfg.process);
  const int nf = proc.n_factors();

  const Table training = read_csv(dir / "training.csv");
  {
    Plot plot("Training loss", "step", "cross-entropy (nats)");
    plot.log_x = true;
    Series s{"loss", {}, {}, kPalette[0]};
    for (std::size_t i = 0; i < training.rows.size(); ++i) {
      s.x.push_back(training.num(i, "step"));
      s.y.push_back(training.num(i, "loss"));
    }
    plot.series.push_back(s);
    plot.write(out / "loss.svg");
  }

  const auto gt = ground_truth_curves(read_csv(dir / "ground_truth.csv"));
  const auto curves = curves_by_step(read_csv(dir / "cev.csv"));
  {
    Plot plot("Cumulative explained variance", "principal components", "CEV");
    plot.y_range = std::make_pair(0.0, 1.02);
    const int shown = std::min(cfg.model.d_model, 40);
    std::size_t i = 0;
    for (const auto& [step, c] : curves) {
      Series s{i == 0 || i + 1 == curves.size() ? "step " + std::to_string(step) : "", {0}, {0}, gradient(i, curves.size()), false, 1.4};
      for (int j = 0; j < std::min<int>(shown, static_cast<int>(c.size())); ++j) {
        s.x.push_back(j + 1);
        s.y.push_back(c[static_cast<std::size_t>(j)]);
      }
      plot.series.push_back(s);
      ++i;
    }
    const std::pair<const char*, const char*> refs[] = {{"factored", "#222222"}, {"joint", "#999999"}};
    for (const auto& [kind, color] : refs) {
      const auto it = gt.find(kind);
      if (it == gt.end()) continue;
      Series s{std::string(kind) + " (exact)", {0}, {0}, color, true, 2.0};
      for (int j = 0; j < std::min<int>(shown, static_cast<int>(it->second.size())); ++j) {
        s.x.push_back(j + 1);
        s.y.push_back(it->second[static_cast<std::size_t>(j)]);
      }
      plot.series.push_back(s);
    }
    plot.write(out / "cev.svg");
  }

  const Table kstar = read_csv(dir / "kstar.csv");
  {
    Plot plot("Components for " + fmt(100 * p) + "% variance", "step", "k*");
    plot.log_x = true;
    Series s{"activations", {}, {}, kPalette[0]};
    for (std::size_t i = 0; i < kstar.rows.size(); ++i) {
      s.x.push_back(kstar.num(i, "step"));
      s.y.push_back(kstar.num(i, "k_star"));
    }
    plot.series.push_back(s);
    if (!s.x.empty()) {
      const std::pair<const char*, const char*> refs[] = {{"factored", "#222222"}, {"joint", "#999999"}};
      for (const auto& [kind, color] : refs) {
        const auto it = gt.find(kind);
        if (it == gt.end()) continue;
        const double k = kstar_from_curve(it->second, p);
        if (std::string(kind) == "joint" && k > 2.0 * cfg.model.d_model) continue;
        plot.series.push_back({std::string(kind) + " (exact)", {s.x.front(), s.x.back()}, {k, k}, color, true, 2.0});
      }
    }
    plot.write(out / "kstar.svg");
  }

  const Table reg = read_csv(dir / "regression.csv");
  {
    Plot plot("Linear readout of belief states", "step", "R^2");
    plot.log_x = true;
    for (int n = 0; n < nf; ++n) {
      Series s{"factor " + std::to_string(n), {}, {}, kPalette[n % 10]};
      for (std::size_t i = 0; i < reg.rows.size(); ++i) {
        s.x.push_back(reg.num(i, "step"));
        s.y.push_back(reg.num(i, "r2_f" + std::to_string(n)));
      }
      plot.series.push_back(s);
    }
    plot.write(out / "regression.svg");
  }

  const Table ov = read_csv(dir / "overlap.csv");
  if (!ov.rows.empty()) {
    Plot plot("Pairwise subspace overlap", "step", "overlap");
    plot.log_x = true;
    std::map<std::pair<int, int>, Series> pairs;
    for (std::size_t i = 0; i < ov.rows.size(); ++i) {
      const auto key = std::make_pair(static_cast<int>(ov.num(i, "factor_a")), static_cast<int>(ov.num(i, "factor_b")));
      auto& s = pairs[key];
      s.color = "#cccccc";
      s.width = 1.0;
      s.x.push_back(ov.num(i, "step"));
      s.y.push_back(ov.num(i, "score"));
    }
    for (auto& [k, s] : pairs) plot.series.push_back(s);
    Series mean{"mean", {}, {}, kPalette[2], false, 2.4};
    for (const auto& [step, v] : mean_overlap_by_step(ov)) {
      mean.x.push_back(step);
      mean.y.push_back(v);
    }
    plot.series.push_back(mean);
    plot.write(out / "overlap.svg");
  }

  const Table attr = read_csv(dir / "attribution.csv");
  if (!attr.rows.empty()) {
    const double last = attr.num(attr.rows.size() - 1, "step");
    Plot plot("Embedding singular values by factor (step " + fmt(last, 10) + ")", "singular direction", "sigma");
    for (int n = 0; n < nf; ++n) plot.bar_names.push_back("factor " + std::to_string(n));
    for (std::size_t i = 0; i < attr.rows.size(); ++i) {
      if (attr.num(i, "step") != last) continue;
      const double j = attr.num(i, "sv_index");
      if (j > 30) continue;
      Bar b;
      b.x = j;
      const double sigma = attr.num(i, "sigma");
      double covered = 0.0;
      for (int n = 0; n < nf; ++n) {
        const double a = attr.num(i, "attr_f" + std::to_string(n));
        b.parts.push_back(sigma * a);
        covered += a;
      }
      b.parts.push_back(sigma * std::max(0.0, 1.0 - covered));
      plot.bars.push_back(b);
    }
    plot.bar_names.push_back("unattributed");
    plot.write(out / "attribution.svg");
  }
}

}  // namespace

UnitSummary summarize_unit(const fs::path& dir) {
  const auto cfg = unit_config(dir);
  const double p = cfg.analysis.cev_p;
  UnitSummary s;
  s.label = dir.filename().string();
  s.epsilon = cfg.process.regime == Regime::kNoisy ? cfg.process.epsilon : 0.0;
  s.seed = cfg.seeds.front();
  const Table training = read_csv(dir / "training.csv");
  require(!training.rows.empty(), ErrorCode::kIo, "training.csv has no rows in " + dir.string());
  s.final_step = static_cast<int>(training.num(training.rows.size() - 1, "step"));
  s.final_loss = training.num(training.rows.size() - 1, "loss");
  const Table kstar = read_csv(dir / "kstar.csv");
  require(!kstar.rows.empty(), ErrorCode::kIo, "kstar.csv has no rows in " + dir.string());
  s.kstar = static_cast<int>(kstar.num(kstar.rows.size() - 1, "k_star"));
  const auto gt = ground_truth_curves(read_csv(dir / "ground_truth.csv"));
  if (gt.count("factored")) s.kstar_factored = kstar_from_curve(gt.at("factored"), p);
  if (gt.count("joint")) s.kstar_joint = kstar_from_curve(gt.at("joint"), p);
  const Table reg = read_csv(dir / "regression.csv");
  require(!reg.rows.empty(), ErrorCode::kIo, "regression.csv has no rows in " + dir.string());
  const std::size_t last = reg.rows.size() - 1;
  s.r2_total = reg.num(last, "r2_total");
  for (int n = 0;; ++n) {
    const std::string c = "r2_f" + std::to_string(n);
    if (std::find(reg.columns.begin(), reg.columns.end(), c) == reg.columns.end()) break;
    s.r2.push_back(reg.num(last, c));
  }
  const auto ov = mean_overlap_by_step(read_csv(dir / "overlap.csv"));
  if (!ov.empty()) {
    s.has_overlap = true;
    s.overlap_init = ov.begin()->second;
    s.overlap_final = ov.rbegin()->second;
  }
  return s;
}

void report(const fs::path& root) {
  const auto units = run_units(root);
  std::vector<std::string> missing;
  for (const auto& u : units) {
    for (const auto& f : kUnitFiles) {
      if (!fs::exists(u / f)) missing.push_back((u / f).string());
    }
  }
  if (!missing.empty()) {
    std::string msg = "run is incomplete; missing:";
    for (const auto& m : missing) msg += "\n  " + m;
    fail(ErrorCode::kIo, msg);
  }

  const fs::path out = root / "report";
  fs::create_directories(out);
  std::vector<UnitSummary> sums;
  for (const auto& u : units) {
    const fs::path rel = fs::relative(u, root);
    report_unit(u, rel == "." ? out : out / rel);
    sums.push_back(summarize_unit(u));
    if (rel != ".") sums.back().label = rel.generic_string();
  }

  std::size_t nf = 0;
  for (const auto& s : sums) nf = std::max(nf, s.r2.size());
  std::ofstream csv(out / "summary.csv", std::ios::binary);
  std::ofstream md(out / "summary.md", std::ios::binary);
  require(csv.good() && md.good(), ErrorCode::kIo, "cannot write summary under " + out.string());
  csv << "unit,epsilon,seed,final_step,final_loss,k_star,k_star_factored,k_star_joint,r2_total";
  md << "| unit | eps | seed | step | loss | k* | k* factored | k* joint | R2 total";
  for (std::size_t n = 0; n < nf; ++n) {
    csv << ",r2_f" << n;
    md << " | R2 f" << n;
  }
  csv << ",overlap_init,overlap_final\n";
  md << " | overlap init | overlap final |\n|";
  for (std::size_t c = 0; c < 11 + nf; ++c) md << "---|";
  md << '\n';
  for (const auto& s : sums) {
    csv << s.label << ',' << fmt(s.epsilon, 10) << ',' << s.seed << ',' << s.final_step << ',' << fmt(s.final_loss, 10)
        << ',' << s.kstar << ',' << s.kstar_factored << ',' << s.kstar_joint << ',' << fmt(s.r2_total, 10);
    md << "| " << s.label << " | " << fmt(s.epsilon) << " | " << s.seed << " | " << s.final_step << " | "
       << fmt(s.final_loss) << " | " << s.kstar << " | " << s.kstar_factored << " | " << s.kstar_joint << " | "
       << fmt(s.r2_total);
    for (std::size_t n = 0; n < nf; ++n) {
      const double v = n < s.r2.size() ? s.r2[n] : std::numeric_limits<double>::quiet_NaN();
      csv << ',' << fmt(v, 10);
      md << " | " << fmt(v);
    }
    csv << ',' << (s.has_overlap ? fmt(s.overlap_init, 10) : "") << ',' << (s.has_overlap ? fmt(s.overlap_final, 10) : "")
        << '\n';
    md << " | " << (s.has_overlap ? fmt(s.overlap_init) : "-") << " | " << (s.has_overlap ? fmt(s.overlap_final) : "-")
       << " |\n";
  }

  if (units.size() > 1) {
    Plot plot("k* over training by unit", "step", "k*");
    plot.log_x = true;
    for (std::size_t i = 0; i < units.size(); ++i) {
      const Table k = read_csv(units[i] / "kstar.csv");
      Series s{sums[i].label, {}, {}, kPalette[i % 10]};
      for (std::size_t r = 0; r < k.rows.size(); ++r) {
        s.x.push_back(k.num(r, "step"));
        s.y.push_back(k.num(r, "k_star"));
      }
      plot.series.push_back(s);
    }
    if (sums.front().kstar_factored > 0 && !plot.series.front().x.empty()) {
      const double k = sums.front().kstar_factored;
      plot.series.push_back({"factored (exact)", {plot.series.front().x.front(), plot.series.front().x.back()}, {k, k}, "#222222", true, 2.0});
    }
    plot.write(out / "kstar_units.svg");
  }
}

}  // namespace flab::lab
