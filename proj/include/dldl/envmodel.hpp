#pragma once

#include <chrono>
#include <span>
#include <string>
#include <vector>

#include "dldl/common.hpp"

namespace dldl::env {

using Date = std::chrono::year_month_day;

Date parse_date(const std::string& iso);                 // YYYY-MM-DD
std::string format_date(const Date& d);
Date add_days(const Date& d, int n);
int days_between(const Date& from, const Date& to);      // to - from

struct Timestamp {
    Date date;
    int hour = 0;  // 0..23

    bool operator==(const Timestamp&) const = default;
};

// ISO-8601 hour resolution: YYYY-MM-DDTHH:MM[:SS] (space accepted for T).
Timestamp parse_timestamp(const std::string& iso);
std::string format_timestamp(const Timestamp& ts);

struct WeatherRecord {
    Timestamp timestamp;
    double temperature_c = 0.0;
    double relative_humidity_pct = 0.0;
};

// Hourly records with strictly increasing timestamps.
class WeatherSeries {
public:
    WeatherSeries() = default;
    explicit WeatherSeries(std::vector<WeatherRecord> records);

    const std::vector<WeatherRecord>& records() const { return records_; }
    bool empty() const { return records_.empty(); }
    std::size_t size() const { return records_.size(); }

    // nullptr when the hour is absent.
    const WeatherRecord* find(const Date& date, int hour) const;

private:
    std::vector<WeatherRecord> records_;
};

WeatherSeries load_weather_csv(const std::string& path);
void save_weather_csv(const WeatherSeries& series, const std::string& path);

struct ThermalConfig {
    double t_base = 0.0;
    double t_upper = 0.0;
    double incubation_thermal_sum = 0.0;  // degC*h, NPG only
    Date start_date{};                    // sowing or epidemic start

    void validate() const;
};

// Crop profiles used throughout this project.
ThermalConfig sugar_beet_gdd_config(const Date& sowing);      // t_base 1.1, t_upper 30
ThermalConfig cercospora_npg_config(const Date& start);       // t_base 6.3, t_upper 32, 4963 degC*h

struct EnvLabels {
    Date date{};
    double gdd = 0.0;
    double npg = 0.0;
};

double clamp_temperature(double t, const ThermalConfig& cfg);

// Mean over 24 clamped hourly readings minus the base temperature.
// Exactly 24 readings; each stands for both the hour's max and min.
double daily_gdd(std::span<const double> hourly_temps, const ThermalConfig& cfg);

// Sum of daily_gdd over [cfg.start_date, date]; empty when date precedes start.
double cumulative_gdd(const WeatherSeries& series, const ThermalConfig& cfg, const Date& date);

double hourly_npg_increment(double temperature, double relative_humidity, const ThermalConfig& cfg);

double cumulative_npg(const WeatherSeries& series, const ThermalConfig& cfg, const Date& date);

// Per-date table over an inclusive date range.
std::vector<EnvLabels> env_labels_table(const WeatherSeries& series, const ThermalConfig& gdd_cfg,
                                        const ThermalConfig& npg_cfg, const Date& from, const Date& to);

}  // namespace dldl::env
