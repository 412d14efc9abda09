#include <fstream>
#include <iostream>
#include <sstream>

#include "aqg/errors.hpp"
#include "aqg/text.hpp"
#include "json.hpp"

namespace aqg {

namespace {

// SQuAD offsets count Unicode code points; convert to a UTF-8 byte offset.
std::size_t codepoint_to_byte(std::string_view s, std::size_t cp) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) == 0x80) continue;
    if (seen == cp) return i;
    ++seen;
  }
  return seen == cp ? s.size() : std::string_view::npos;
}

}  // namespace

SquadLoadResult load_squad_text(std::string_view json, const std::string& source_name,
                                const std::unordered_set<std::string>* keep_ids) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source_name + ": malformed SQuAD JSON: " + e.what());
  }
  SquadLoadResult result;
  try {
    for (const auto& article : doc.at("data")) {
      for (const auto& para : article.at("paragraphs")) {
        const std::string context = para.at("context").get<std::string>();
        for (const auto& qa : para.at("qas")) {
          const std::string id = qa.at("id").get<std::string>();
          if (keep_ids && !keep_ids->count(id)) continue;
          const auto& answers = qa.at("answers");
          if (answers.empty()) {
            ++result.skipped;
            continue;
          }
          const auto& first = answers.at(0);
          RawExample ex;
          ex.id = id;
          ex.passage = context;
          ex.question = qa.at("question").get<std::string>();
          ex.answer = first.at("text").get<std::string>();
          const auto cp = first.at("answer_start").get<std::size_t>();
          const std::size_t byte = codepoint_to_byte(context, cp);
          if (byte == std::string_view::npos ||
              context.compare(byte, ex.answer.size(), ex.answer) != 0) {
            ++result.skipped;
            continue;
          }
          ex.answer_start = byte;
          result.examples.push_back(std::move(ex));
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source_name + ": unexpected SQuAD structure: " + e.what());
  }
  if (result.skipped) {
    std::cerr << "warning: " << source_name << ": skipped " << result.skipped
              << " question(s) whose answer does not match its offset\n";
  }
  return result;
}

SquadLoadResult load_squad(const std::filesystem::path& path,
                           const std::unordered_set<std::string>* keep_ids) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read SQuAD file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return load_squad_text(buf.str(), path.string(), keep_ids);
}

std::vector<std::string> read_id_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read split id file " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

SquadLoadResult load_squad_split(const std::filesystem::path& squad_path,
                                 const std::filesystem::path& split_ids_path) {
  const auto ids = read_id_list(split_ids_path);
  const std::unordered_set<std::string> keep(ids.begin(), ids.end());
  return load_squad(squad_path, &keep);
}

}  // namespace aqg
