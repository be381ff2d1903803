#include "dldl/envmodel.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dldl::env {

namespace {

int to_int(std::string_view s, const char* what) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DataError(std::string("invalid ") + what + ": '" + std::string(s) + "'");
    return v;
}

}  // namespace

Date parse_date(const std::string& iso) {
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-')
        throw DataError("invalid date '" + iso + "', expected YYYY-MM-DD");
    std::string_view sv(iso);
    Date d{std::chrono::year{to_int(sv.substr(0, 4), "year")},
           std::chrono::month{static_cast<unsigned>(to_int(sv.substr(5, 2), "month"))},
           std::chrono::day{static_cast<unsigned>(to_int(sv.substr(8, 2), "day"))}};
    if (!d.ok()) throw DataError("invalid calendar date '" + iso + "'");
    return d;
}

std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(d.year()), unsigned(d.month()), unsigned(d.day()));
    return buf;
}

Date add_days(const Date& d, int n) {
    return Date{std::chrono::sys_days{d} + std::chrono::days{n}};
}

int days_between(const Date& from, const Date& to) {
    return int((std::chrono::sys_days{to} - std::chrono::sys_days{from}).count());
}

Timestamp parse_timestamp(const std::string& iso) {
    if (iso.size() < 16 || (iso[10] != 'T' && iso[10] != ' ') || iso[13] != ':')
        throw DataError("invalid timestamp '" + iso + "', expected YYYY-MM-DDTHH:MM");
    Timestamp ts;
    ts.date = parse_date(iso.substr(0, 10));
    ts.hour = to_int(std::string_view(iso).substr(11, 2), "hour");
    if (ts.hour < 0 || ts.hour > 23) throw DataError("hour out of range in '" + iso + "'");
    int minute = to_int(std::string_view(iso).substr(14, 2), "minute");
    if (minute != 0) throw DataError("sub-hour timestamps unsupported: '" + iso + "'");
    return ts;
}

std::string format_timestamp(const Timestamp& ts) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%s" "T%02d:00", format_date(ts.date).c_str(), ts.hour);
    return buf;
}

namespace {

std::int64_t hour_key(const Timestamp& ts) {
    return std::chrono::sys_days{ts.date}.time_since_epoch().count() * 24LL + ts.hour;
}

}  // namespace

WeatherSeries::WeatherSeries(std::vector<WeatherRecord> records) : records_(std::move(records)) {
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        if (r.relative_humidity_pct < 0.0 || r.relative_humidity_pct > 100.0)
            throw DataError("relative humidity out of [0,100] at " + format_timestamp(r.timestamp));
        if (i > 0 && hour_key(records_[i - 1].timestamp) >= hour_key(r.timestamp))
            throw DataError("weather timestamps not strictly increasing at " + format_timestamp(r.timestamp));
    }
}

const WeatherRecord* WeatherSeries::find(const Date& date, int hour) const {
    Timestamp probe{date, hour};
    auto key = hour_key(probe);
    auto it = std::lower_bound(records_.begin(), records_.end(), key,
                               [](const WeatherRecord& r, std::int64_t k) { return hour_key(r.timestamp) < k; });
    if (it == records_.end() || hour_key(it->timestamp) != key) return nullptr;
    return &*it;
}

WeatherSeries load_weather_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open weather file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty weather file '" + path + "'");
    if (line.ends_with('\r')) line.pop_back();
    if (line != "timestamp,temperature_c,relative_humidity_pct")
        throw DataError("unexpected weather CSV header in '" + path + "': " + line);
    std::vector<WeatherRecord> recs;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed weather row");
        WeatherRecord r;
        try {
            r.timestamp = parse_timestamp(line.substr(0, c1));
            r.temperature_c = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
            r.relative_humidity_pct = std::stod(line.substr(c2 + 1));
        } catch (const std::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        recs.push_back(r);
    }
    return WeatherSeries(std::move(recs));
}

void save_weather_csv(const WeatherSeries& series, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write weather file '" + path + "'");
    out << "timestamp,temperature_c,relative_humidity_pct\n";
    char buf[96];
    for (const auto& r : series.records()) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g\n", format_timestamp(r.timestamp).c_str(),
                      r.temperature_c, r.relative_humidity_pct);
        out << buf;
    }
}

void ThermalConfig::validate() const {
    if (!(t_base < t_upper)) throw ConfigError("thermal config requires t_base < t_upper");
}

ThermalConfig sugar_beet_gdd_config(const Date& sowing) {
    return ThermalConfig{1.1, 30.0, 0.0, sowing};
}

ThermalConfig cercospora_npg_config(const Date& start) {
    return ThermalConfig{6.3, 32.0, 4963.0, start};
}

double clamp_temperature(double t, const ThermalConfig& cfg) {
    if (t > cfg.t_upper) return cfg.t_upper;
    if (t < cfg.t_base) return cfg.t_base;
    return t;
}

double daily_gdd(std::span<const double> hourly_temps, const ThermalConfig& cfg) {
    if (hourly_temps.size() != 24)
        throw ShapeError("daily_gdd expects 24 hourly readings, got " + std::to_string(hourly_temps.size()));
    // One reading per hour: the hourly max and min coincide, so the Eq. 1
    // average per hour degenerates to clamp(T) - t_base.
    double sum = 0.0;
    for (double t : hourly_temps) sum += clamp_temperature(t, cfg) - cfg.t_base;
    return sum / 24.0;
}

namespace {

// 24 hourly temperatures of one day, or an error naming the missing hour.
std::vector<double> require_day(const WeatherSeries& series, const Date& date) {
    std::vector<double> temps(24);
    for (int h = 0; h < 24; ++h) {
        const WeatherRecord* r = series.find(date, h);
        if (!r)
            throw DataError("weather series missing " + format_date(date) + " hour " + std::to_string(h));
        temps[static_cast<std::size_t>(h)] = r->temperature_c;
    }
    return temps;
}

}  // namespace

double cumulative_gdd(const WeatherSeries& series, const ThermalConfig& cfg, const Date& date) {
    cfg.validate();
    double total = 0.0;
    for (Date d = cfg.start_date; days_between(d, date) >= 0; d = add_days(d, 1))
        total += daily_gdd(require_day(series, d), cfg);
    return total;
}

double hourly_npg_increment(double temperature, double relative_humidity, const ThermalConfig& cfg) {
    double factor = relative_humidity < 80.0 ? 7.0 / 8.0 : 9.0 / 8.0;
    return (clamp_temperature(temperature, cfg) - cfg.t_base) * factor;
}

double cumulative_npg(const WeatherSeries& series, const ThermalConfig& cfg, const Date& date) {
    cfg.validate();
    if (!(cfg.incubation_thermal_sum > 0.0))
        throw ConfigError("cumulative_npg requires incubation_thermal_sum > 0");
    double thermal_sum = 0.0;
    for (Date d = cfg.start_date; days_between(d, date) >= 0; d = add_days(d, 1)) {
        for (int h = 0; h < 24; ++h) {
            const WeatherRecord* r = series.find(d, h);
            if (!r)
                throw DataError("weather series missing " + format_date(d) + " hour " + std::to_string(h));
            thermal_sum += hourly_npg_increment(r->temperature_c, r->relative_humidity_pct, cfg);
        }
    }
    return thermal_sum / cfg.incubation_thermal_sum;
}

std::vector<EnvLabels> env_labels_table(const WeatherSeries& series, const ThermalConfig& gdd_cfg,
                                        const ThermalConfig& npg_cfg, const Date& from, const Date& to) {
    std::vector<EnvLabels> table;
    for (Date d = from; days_between(d, to) >= 0; d = add_days(d, 1))
        table.push_back({d, cumulative_gdd(series, gdd_cfg, d), cumulative_npg(series, npg_cfg, d)});
    return table;
}

}  // namespace dldl::env
