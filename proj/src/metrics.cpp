#include "textseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "textseg/error.hpp"
#include "textseg/kvfile.hpp"
#include "textseg/spatial_prior.hpp"

namespace textseg {

namespace {

void check_same(const BinaryMask& a, const BinaryMask& b) {
  if (a.dims != b.dims || a.bits.size() != b.bits.size()) throw Error(ErrorCode::DimMismatch, "mask dims differ");
}

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

Counts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  Counts c;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool p = pred.bits[i] != 0;
    const bool g = gt.bits[i] != 0;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
  }
  return c;
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

double dsc(const BinaryMask& pred, const BinaryMask& gt) {
  const auto c = confusion(pred, gt);
  const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
  if (denom == 0.0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / denom;
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  const auto c = confusion(pred, gt);
  const double uni = static_cast<double>(c.tp + c.fp + c.fn);
  if (uni == 0.0) return 1.0;
  return static_cast<double>(c.tp) / uni;
}

double miou(const std::vector<double>& per_class_iou) {
  if (per_class_iou.empty()) return 0.0;
  double s = 0.0;
  for (double v : per_class_iou) s += v;
  return s / static_cast<double>(per_class_iou.size());
}

PrecisionRecall precision_recall_fbeta(const BinaryMask& pred, const BinaryMask& gt, double beta) {
  const auto c = confusion(pred, gt);
  PrecisionRecall out;
  out.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  out.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  const double b2 = beta * beta;
  out.f_beta = ratio((1.0 + b2) * out.precision * out.recall, b2 * out.precision + out.recall);
  return out;
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<double> directed_distances(const BinaryMask& from, const BinaryMask& to) {
  check_same(from, to);
  const auto field = squared_edt(to);
  std::vector<double> out;
  for (std::size_t i = 0; i < from.bits.size(); ++i) {
    if (from.bits[i]) out.push_back(std::sqrt(field.values[i]));
  }
  return out;
}

std::optional<double> hd95(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  const bool pe = pred.empty();
  const bool ge = gt.empty();
  if (pe && ge) return 0.0;
  if (pe || ge) return std::nullopt;
  const double a = percentile_linear(directed_distances(pred, gt), 0.95);
  const double b = percentile_linear(directed_distances(gt, pred), 0.95);
  return std::max(a, b);
}

std::optional<double> rvd(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  const auto g = static_cast<double>(gt.count());
  if (g == 0.0) return std::nullopt;
  return (static_cast<double>(pred.count()) - g) / g * 100.0;
}

namespace {

OrganMetrics organ_metrics(const BinaryMask& p, const BinaryMask& g) {
  OrganMetrics m;
  m.dsc = dsc(p, g);
  m.iou = iou(p, g);
  const auto f1 = precision_recall_fbeta(p, g, 1.0);
  m.f1 = f1.f_beta;
  m.f1_50 = f1.f_beta;
  m.f2 = precision_recall_fbeta(p, g, 2.0).f_beta;
  m.precision = f1.precision;
  m.recall = f1.recall;
  m.hd95 = hd95(p, g);
  m.rvd = rvd(p, g);
  return m;
}

void finalize_averages(MetricsReport& r) {
  OrganMetrics avg;
  double hd_sum = 0.0;
  double rvd_sum = 0.0;
  int hd_n = 0;
  int rvd_n = 0;
  r.hd95_undefined = 0;
  r.rvd_undefined = 0;
  std::vector<double> ious;
  for (const auto& [id, m] : r.per_organ) {
    avg.dsc += m.dsc;
    avg.iou += m.iou;
    avg.f1_50 += m.f1_50;
    avg.f1 += m.f1;
    avg.f2 += m.f2;
    avg.precision += m.precision;
    avg.recall += m.recall;
    ious.push_back(m.iou);
    if (m.hd95) {
      hd_sum += *m.hd95;
      ++hd_n;
    } else {
      ++r.hd95_undefined;
    }
    if (m.rvd) {
      rvd_sum += *m.rvd;
      ++rvd_n;
    } else {
      ++r.rvd_undefined;
    }
  }
  const auto n = static_cast<double>(r.per_organ.size());
  if (n > 0) {
    avg.dsc /= n;
    avg.iou /= n;
    avg.f1_50 /= n;
    avg.f1 /= n;
    avg.f2 /= n;
    avg.precision /= n;
    avg.recall /= n;
  }
  if (hd_n) avg.hd95 = hd_sum / hd_n;
  if (rvd_n) avg.rvd = rvd_sum / rvd_n;
  r.averages = avg;
  r.miou = miou(ious);
}

MetricsReport evaluate_impl(const LabelMap& pred, const LogitTensor* probs, const LabelMap& gt, int num_classes) {
  if (pred.dims != gt.dims || pred.data.size() != gt.data.size()) {
    throw Error(ErrorCode::DimMismatch, "prediction and ground truth dims differ");
  }
  if (pred.spacing != gt.spacing) throw Error(ErrorCode::DimMismatch, "prediction and ground truth spacing differ");
  if (probs && (probs->dims != gt.dims || probs->channels != num_classes)) {
    throw Error(ErrorCode::DimMismatch, "probability tensor shape differs");
  }
  MetricsReport r;
  for (int c = 1; c < num_classes; ++c) {
    const auto p = binarize(pred, c);
    const auto g = binarize(gt, c);
    if (p.empty() && g.empty()) {
      r.undefined_organs.push_back(c);
      continue;
    }
    auto m = organ_metrics(p, g);
    if (probs) {
      BinaryMask thr(gt.dims, gt.spacing);
      const auto ch = probs->channel(c);
      for (std::size_t i = 0; i < ch.size(); ++i) thr.bits[i] = ch[i] >= 0.5;
      m.f1_50 = precision_recall_fbeta(thr, g, 1.0).f_beta;
    }
    r.per_organ[c] = m;
  }
  finalize_averages(r);
  return r;
}

std::string fmt(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v, int prec) { return v ? fmt(*v, prec) : "undefined"; }

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string title_case(std::string s) {
  bool start = true;
  for (auto& ch : s) {
    if (start && std::isalpha(static_cast<unsigned char>(ch))) ch = static_cast<char>(std::toupper(ch));
    start = ch == ' ';
  }
  return s;
}

}  // namespace

MetricsReport evaluate_labelmaps(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  return evaluate_impl(pred, nullptr, gt, num_classes);
}

MetricsReport evaluate_with_probabilities(const LabelMap& pred, const LogitTensor& probs, const LabelMap& gt,
                                          int num_classes) {
  return evaluate_impl(pred, &probs, gt, num_classes);
}

MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports) {
  MetricsReport out;
  std::map<int, std::vector<const OrganMetrics*>> by_organ;
  std::map<int, int> undefined_everywhere;
  for (const auto& r : reports) {
    for (const auto& [id, m] : r.per_organ) by_organ[id].push_back(&m);
    for (int id : r.undefined_organs) ++undefined_everywhere[id];
  }
  for (const auto& [id, ms] : by_organ) {
    OrganMetrics a;
    double hd = 0.0, rv = 0.0;
    int hd_n = 0, rv_n = 0;
    for (const auto* m : ms) {
      a.dsc += m->dsc;
      a.iou += m->iou;
      a.f1_50 += m->f1_50;
      a.f1 += m->f1;
      a.f2 += m->f2;
      a.precision += m->precision;
      a.recall += m->recall;
      if (m->hd95) hd += *m->hd95, ++hd_n;
      if (m->rvd) rv += *m->rvd, ++rv_n;
    }
    const auto n = static_cast<double>(ms.size());
    a.dsc /= n;
    a.iou /= n;
    a.f1_50 /= n;
    a.f1 /= n;
    a.f2 /= n;
    a.precision /= n;
    a.recall /= n;
    if (hd_n) a.hd95 = hd / hd_n;
    if (rv_n) a.rvd = rv / rv_n;
    out.per_organ[id] = a;
  }
  for (const auto& [id, n] : undefined_everywhere) {
    if (!by_organ.count(id)) out.undefined_organs.push_back(id);
  }

  // Averages: mean over reports of each report's per-organ mean.
  OrganMetrics avg;
  double hd = 0.0, rv = 0.0, mi = 0.0;
  int hd_n = 0, rv_n = 0;
  for (const auto& r : reports) {
    avg.dsc += r.averages.dsc;
    avg.iou += r.averages.iou;
    avg.f1_50 += r.averages.f1_50;
    avg.f1 += r.averages.f1;
    avg.f2 += r.averages.f2;
    avg.precision += r.averages.precision;
    avg.recall += r.averages.recall;
    mi += r.miou;
    if (r.averages.hd95) hd += *r.averages.hd95, ++hd_n;
    if (r.averages.rvd) rv += *r.averages.rvd, ++rv_n;
    out.hd95_undefined += r.hd95_undefined;
    out.rvd_undefined += r.rvd_undefined;
  }
  if (!reports.empty()) {
    const auto n = static_cast<double>(reports.size());
    avg.dsc /= n;
    avg.iou /= n;
    avg.f1_50 /= n;
    avg.f1 /= n;
    avg.f2 /= n;
    avg.precision /= n;
    avg.recall /= n;
    out.miou = mi / n;
  }
  if (hd_n) avg.hd95 = hd / hd_n;
  if (rv_n) avg.rvd = rv / rv_n;
  out.averages = avg;
  return out;
}

std::string format_report_table(const MetricsReport& report, const Lexicon& lex) {
  const std::size_t w0 = 28;
  const std::size_t w = 10;
  std::string out = pad("Organ", w0);
  for (const char* h : {"DSC", "IoU", "F1_50", "F1", "F2", "Precision", "Recall", "HD95"}) out += pad(h, w);
  out += "\n";
  auto row = [&](const std::string& name, const OrganMetrics& m) {
    std::string line = pad(name, w0);
    for (double v : {m.dsc, m.iou, m.f1_50, m.f1, m.f2, m.precision, m.recall}) line += pad(fmt(v, 4), w);
    line += pad(fmt_opt(m.hd95, 3), w);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  };
  for (const auto& [id, m] : report.per_organ) row(title_case(lex.name(id)), m);
  row("Average (per organ)", report.averages);
  return out;
}

std::string format_report_kv(const MetricsReport& report, const Lexicon& lex) {
  KeyValueFile kv;
  auto put = [&](const std::string& prefix, const OrganMetrics& m) {
    kv.add(prefix + ".dsc", format_double(m.dsc));
    kv.add(prefix + ".iou", format_double(m.iou));
    kv.add(prefix + ".f1_50", format_double(m.f1_50));
    kv.add(prefix + ".f1", format_double(m.f1));
    kv.add(prefix + ".f2", format_double(m.f2));
    kv.add(prefix + ".precision", format_double(m.precision));
    kv.add(prefix + ".recall", format_double(m.recall));
    kv.add(prefix + ".hd95", m.hd95 ? format_double(*m.hd95) : "undefined");
    kv.add(prefix + ".rvd", m.rvd ? format_double(*m.rvd) : "undefined");
  };
  for (const auto& [id, m] : report.per_organ) {
    const std::string prefix = "class" + std::to_string(id);
    kv.add(prefix + ".name", lex.name(id));
    put(prefix, m);
  }
  put("average", report.averages);
  kv.add("average.miou", format_double(report.miou));
  std::string undef;
  for (std::size_t i = 0; i < report.undefined_organs.size(); ++i) {
    undef += (i ? "," : "") + std::to_string(report.undefined_organs[i]);
  }
  kv.add("undefined_organs", undef);
  kv.add("hd95_undefined", std::to_string(report.hd95_undefined));
  kv.add("rvd_undefined", std::to_string(report.rvd_undefined));
  return kv.serialize(':');
}

}  // namespace textseg
