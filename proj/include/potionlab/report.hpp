#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "harness.hpp"

namespace potionlab {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error("results file has no column '" + name + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results file " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw std::runtime_error("empty results file " + path);
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != t.header.size()) throw std::runtime_error("ragged row in " + path);
    t.rows.push_back(std::move(f));
  }
  if (t.rows.empty()) throw std::runtime_error("empty results file " + path);
  return t;
}

struct MeanStd {
  double mean = 0.0, std = 0.0;
  std::size_t n = 0;
};

// population standard deviation; 0 for a single value
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

inline double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::runtime_error("not a number: " + s);
  return v;
}

// |S_f| / |S_m| for a discovery label as written in the results file
inline double discovery_fraction(const std::string& label, std::size_t m) {
  if (label.rfind("n=", 0) == 0) return static_cast<double>(std::stoul(label.substr(2))) / static_cast<double>(m);
  const double f = parse_double(label);
  const double k = std::max(1.0, std::round(f * static_cast<double>(m)));
  return k / static_cast<double>(m);
}

struct SummaryRow {
  std::string method;
  MeanStd healed, damage;
};

// Groups rows by method in order of first appearance; failed rows are skipped.
inline std::vector<SummaryRow> summarize(const CsvTable& t) {
  const std::size_t cm = t.column("method"), ch = t.column("healed_pct"), cd = t.column("damage_pts");
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : t.rows) {
    if (r[ch].empty()) continue;
    if (!groups.count(r[cm])) order.push_back(r[cm]);
    groups[r[cm]].first.push_back(parse_double(r[ch]));
    groups[r[cm]].second.push_back(parse_double(r[cd]));
  }
  if (order.empty()) throw std::runtime_error("results contain no successful rows");
  std::vector<SummaryRow> out;
  for (const auto& m : order) out.push_back({m, mean_std(groups[m].first), mean_std(groups[m].second)});
  return out;
}

inline std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

inline std::string format_summary(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "method      n    healed %            damage (pts)\n";
  for (const auto& r : rows) {
    std::string name = r.method;
    name.resize(std::max<std::size_t>(name.size(), 10), ' ');
    std::string healed = fixed(r.healed.mean) + " +- " + fixed(r.healed.std);
    healed.resize(std::max<std::size_t>(healed.size(), 18), ' ');
    os << name << "  " << r.healed.n << (r.healed.n < 10 ? "    " : r.healed.n < 100 ? "   " : "  ") << healed
       << "  " << fixed(r.damage.mean) << " +- " << fixed(r.damage.std) << "\n";
  }
  return os.str();
}

inline void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path);
  out << "method,n,healed_mean,healed_std,damage_mean,damage_std\n";
  for (const auto& r : rows)
    out << join_csv({r.method, std::to_string(r.healed.n), format_number(r.healed.mean), format_number(r.healed.std),
                     format_number(r.damage.mean), format_number(r.damage.std)})
        << "\n";
}

struct CurvePoint {
  std::string method, discovery;
  double x = 0.0;
  MeanStd healed, damage;
};

// One point per (method, discovery) pair, in order of first appearance.
inline std::vector<CurvePoint> curves(const CsvTable& t) {
  const std::size_t cm = t.column("method"), cdisc = t.column("discovery"), cs = t.column("sm_size"),
                    ch = t.column("healed_pct"), cd = t.column("damage_pts");
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<std::array<double, 3>>> groups;
  for (const auto& r : t.rows) {
    if (r[ch].empty()) continue;
    auto key = std::make_pair(r[cm], r[cdisc]);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back({discovery_fraction(r[cdisc], std::stoul(r[cs])), parse_double(r[ch]), parse_double(r[cd])});
  }
  if (order.empty()) throw std::runtime_error("results contain no successful rows");
  std::vector<CurvePoint> out;
  for (const auto& key : order) {
    std::vector<double> xs, hs, ds;
    for (const auto& v : groups[key]) {
      xs.push_back(v[0]);
      hs.push_back(v[1]);
      ds.push_back(v[2]);
    }
    out.push_back({key.first, key.second, mean_std(xs).mean, mean_std(hs), mean_std(ds)});
  }
  return out;
}

inline void write_curves_csv(const std::string& path, const std::vector<CurvePoint>& pts) {
  std::ofstream out(path);
  out << "method,discovery,x,healed_mean,healed_std,damage_mean,damage_std,n\n";
  for (const auto& p : pts)
    out << join_csv({p.method, p.discovery, format_number(p.x), format_number(p.healed.mean),
                     format_number(p.healed.std), format_number(p.damage.mean), format_number(p.damage.std),
                     std::to_string(p.healed.n)})
        << "\n";
}

struct TimingRow {
  std::string method;
  MeanStd importance, search, total;
};

inline std::vector<TimingRow> timings(const CsvTable& t) {
  const std::size_t cm = t.column("method"), ci = t.column("t_importance_s"), cs = t.column("t_search_s"),
                    ct = t.column("t_total_s");
  std::vector<std::string> order;
  std::map<std::string, std::array<std::vector<double>, 3>> groups;
  for (const auto& r : t.rows) {
    if (r[ct].empty()) continue;
    if (!groups.count(r[cm])) order.push_back(r[cm]);
    groups[r[cm]][0].push_back(parse_double(r[ci]));
    groups[r[cm]][1].push_back(parse_double(r[cs]));
    groups[r[cm]][2].push_back(parse_double(r[ct]));
  }
  if (order.empty()) throw std::runtime_error("results contain no successful rows");
  std::vector<TimingRow> out;
  for (const auto& m : order)
    out.push_back({m, mean_std(groups[m][0]), mean_std(groups[m][1]), mean_std(groups[m][2])});
  return out;
}

inline void write_times_csv(const std::string& path, const std::vector<TimingRow>& rows) {
  std::ofstream out(path);
  out << "method,n,importance_mean_s,search_mean_s,total_mean_s,total_std_s\n";
  for (const auto& r : rows)
    out << join_csv({r.method, std::to_string(r.total.n), format_number(r.importance.mean),
                     format_number(r.search.mean), format_number(r.total.mean), format_number(r.total.std)})
        << "\n";
}

}  // namespace potionlab
