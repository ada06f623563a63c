#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "support.hpp"
#include "uavids/report.hpp"

using namespace uavids;

namespace {

Json valid_fragment(std::string_view stage) {
  Json f{{"stage", stage}, {"schema_version", kReportSchemaVersion}, {"warnings", Json::array()}};
  if (stage == "density") {
    f["bandwidth"] = "scott";
    f["features"] = Json::array({Json{{"feature", "x"},
                                      {"curve_file", "plotdata/kde_x.csv"},
                                      {"classes", Json::array({Json{{"class", "A"},
                                                                    {"n", 3},
                                                                    {"min", 0},
                                                                    {"q1", 1},
                                                                    {"median", 2},
                                                                    {"q3", 3},
                                                                    {"max", 4},
                                                                    {"outliers", 0},
                                                                    {"bandwidth", 0.5}}})}}});
  } else if (stage == "wy") {
    f["classes"] = Json{"V", "W"};
    f["permutations"] = 4;
    f["seed"] = 1;
    f["alpha"] = 0.05;
    f["results"] = Json::array({Json{{"feature", "x"},
                                     {"js_distance", 0.5},
                                     {"p_value", 0.2},
                                     {"p_value_text", "0.200000"},
                                     {"reject", false},
                                     {"overlap_intervals", Json::array()},
                                     {"overlap_coefficient", 0.4}}});
    f["family_reject"] = false;
  }
  return f;
}

}  // namespace

TEST(FormatDouble, ShortestRoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::ldexp(rng.uniform() - 0.5, static_cast<int>(rng.below(200)) - 100);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_fixed(0.825746123, 6), "0.825746");
}

TEST(Csv, FieldQuoting) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("RxByteRate/s"), "RxByteRate/s");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
}

TEST(Csv, WriteReadRoundTrip) {
  test::TempDir dir("report-csv");
  const auto path = dir.path() / "t.csv";
  const CsvRow header{"Feature", "Jensen-Shannon Distance", "p-value"};
  const std::vector<CsvRow> rows{{"PacketDropRate", "0.825746", "<0.001"}, {"odd, name", "0.1", "1.000000"}};
  write_csv(path, header, rows);
  const auto back = read_csv(path);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0], header);
  EXPECT_EQ(back[1], rows[0]);
  EXPECT_EQ(back[2], rows[1]);
  { std::ofstream(path) << "a,b\n1\n"; }
  EXPECT_THROW(read_csv(path), DataError);
  EXPECT_THROW(read_csv(dir.path() / "absent.csv"), DataError);
}

TEST(Csv, CurveRoundTripIsExact) {
  test::TempDir dir("report-curve");
  Rng rng(2);
  CurveTable t;
  t.columns = {"x", "A", "B"};
  t.values.resize(64, 3);
  for (auto& v : t.values.reshaped()) v = rng.normal() * 1e-3;
  write_curve_csv(dir.path() / "c.csv", t);
  const auto back = read_curve_csv(dir.path() / "c.csv");
  EXPECT_EQ(back.columns, t.columns);
  EXPECT_EQ(back.values, t.values);
}

TEST(FileStem, ReplacesUnsafeCharacters) {
  EXPECT_EQ(file_stem("RxByteRate/s"), "RxByteRate_s");
  EXPECT_EQ(file_stem("a b:c"), "a_b_c");
  EXPECT_EQ(file_stem("Packet_Drop-Rate.2"), "Packet_Drop-Rate.2");
}

TEST(Fragments, ValidFragmentsAccepted) {
  EXPECT_NO_THROW(validate_fragment("density", valid_fragment("density")));
  EXPECT_NO_THROW(validate_fragment("wy", valid_fragment("wy")));
}

TEST(Fragments, MissingOrMistypedFieldsRejected) {
  Json f = valid_fragment("wy");
  f.erase("warnings");
  EXPECT_THROW(validate_fragment("wy", f), DataError);

  f = valid_fragment("wy");
  f["stage"] = "cv";
  EXPECT_THROW(validate_fragment("wy", f), DataError);

  f = valid_fragment("wy");
  f["results"][0]["p_value"] = 0.1;  // below 1 / (B + 1) = 0.2
  EXPECT_THROW(validate_fragment("wy", f), DataError);

  f = valid_fragment("wy");
  f["results"][0]["js_distance"] = 1.5;
  EXPECT_THROW(validate_fragment("wy", f), DataError);

  f = valid_fragment("wy");
  f["classes"] = Json{"V"};
  EXPECT_THROW(validate_fragment("wy", f), DataError);

  f = valid_fragment("density");
  f["features"][0]["classes"][0].erase("outliers");
  try {
    validate_fragment("density", f);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("outliers"), std::string::npos);
  }
  EXPECT_THROW(validate_fragment("nonsense", valid_fragment("wy")), DataError);
}

TEST(Envelope, HoldsConfigEchoAndFragmentsInStageOrder) {
  RunConfig config;
  config.input = "flows.csv";
  config.schema = {{"x", ColumnRole::numeric}, {"Label", ColumnRole::label}};
  config.seed = 99;
  config.threads = 8;
  config.wy.test.permutations = 250;
  const auto env = make_envelope(config, {{"wy", valid_fragment("wy")}, {"density", valid_fragment("density")}});
  EXPECT_EQ(env.at("schema_version"), kReportSchemaVersion);
  EXPECT_EQ(env.at("tool").at("name"), "uavids");
  EXPECT_EQ(env.at("tool").at("version"), tool_version());
  EXPECT_EQ(env.at("seed"), 99);
  EXPECT_EQ(env.at("config").at("wy").at("permutations"), 250);
  EXPECT_FALSE(env.at("config").contains("threads"));
  std::vector<std::string> order;
  for (const auto& [k, v] : env.at("fragments").items()) order.push_back(k);
  EXPECT_EQ(order, (std::vector<std::string>{"density", "wy"}));
  const std::string text = env.dump();
  EXPECT_EQ(text.find("timestamp"), std::string::npos);
}

TEST(Json, WriteReadRoundTrip) {
  test::TempDir dir("report-json");
  const Json doc{{"a", 0.1}, {"b", Json::array({1, 2})}};
  write_json(dir.path() / "d.json", doc);
  EXPECT_EQ(read_json(dir.path() / "d.json"), doc);
  EXPECT_THROW(read_json(dir.path() / "none.json"), DataError);
}
