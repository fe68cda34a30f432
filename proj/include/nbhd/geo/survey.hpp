#pragma once

#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace nbhd::geo {

// One block group's survey estimates. A disengaged optional is the explicit
// "missing" marker: census jam codes and nulls map here, never to zero.
struct SurveyRow {
  std::string geoid;  // state(2) + county(3) + tract(6) + block group(1)
  std::optional<double> total_population;
  std::optional<double> population_25plus;
  std::optional<double> median_household_income;
  std::optional<double> bachelors;
  std::optional<double> masters;
  std::optional<double> professional;
  std::optional<double> doctorate;
  int year = 0;

  // Empty when the invariants hold (P25 <= Pt, degree sum <= P25, counts >= 0);
  // otherwise a short description of the violated invariant.
  std::string invariant_violation() const;
};

// Maps each survey quantity to the API variable code. Defaults are the ACS
// 5-year detailed-table codes.
struct SurveyVariables {
  std::string total_population = "B01003_001E";
  std::string population_25plus = "B15003_001E";
  std::string median_household_income = "B19013_001E";
  std::string bachelors = "B15003_022E";
  std::string masters = "B15003_023E";
  std::string professional = "B15003_024E";
  std::string doctorate = "B15003_025E";

  std::vector<std::string> codes() const;
};

// The census publishes annotated estimates as large negative placeholders.
bool is_jam_value(double v);

// Parses an ACS JSON response (array of arrays, header first) into rows for
// the requested county. Throws ParseError naming the offending field.
std::vector<SurveyRow> parse_survey_response(const std::string& body,
                                             const SurveyVariables& vars, int year,
                                             const std::string& source);

// Renders rows back into the API's array-of-arrays layout. Used for fixtures.
std::string render_survey_response(const std::vector<SurveyRow>& rows,
                                   const SurveyVariables& vars);

struct SurveyClientOptions {
  std::string endpoint = "https://api.census.gov/data";
  std::string dataset = "acs/acs5";
  std::string api_key;
  std::optional<std::filesystem::path> fixture;  // offline mode
  SurveyVariables variables;
  int max_attempts = 3;
  int backoff_ms = 200;
  int timeout_s = 30;
};

// Fetches block-group rows per county. Concurrent requests for the same
// (state, county, year) share one in-flight fetch.
class SurveyClient {
 public:
  explicit SurveyClient(SurveyClientOptions options);

  std::vector<SurveyRow> fetch(const std::string& state_fips, const std::string& county_fips,
                               int year);

  // Number of transport-level requests made (fixture reads count as one).
  int requests_made() const;

  std::string request_path(const std::string& state_fips, const std::string& county_fips,
                           int year) const;

 private:
  std::vector<SurveyRow> fetch_uncached(const std::string& state_fips,
                                        const std::string& county_fips, int year);
  std::string http_get(const std::string& path_and_query);

  SurveyClientOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_future<std::vector<SurveyRow>>> inflight_;
  int requests_ = 0;
};

std::vector<SurveyRow> fetch_survey(const std::string& state_fips, const std::string& county_fips,
                                    int year, const SurveyClientOptions& options);

}  // namespace nbhd::geo
