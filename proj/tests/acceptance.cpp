// Runs the full synthetic pipeline twice through the CLI and prints one line
// per acceptance criterion. Exit status is nonzero when any criterion fails.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
  int exit_code = -1;
  std::string out;
  fs::path dir;
};

Run run_repro(const fs::path& workdir) {
  fs::remove_all(workdir);
  fs::create_directories(workdir);
  const std::string cmd = std::string("\"") + VOXELBRIDGE_BIN + "\" --workdir \"" + workdir.string() +
                          "\" repro --seed 7 2>\"" + (workdir / "stderr.txt").string() + "\"";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) r.out += buf;
  const int status = pclose(p);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.dir = workdir / "runs" / "repro-001";
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every output file except run.json, which records wall time.
std::map<std::string, std::string> outputs(const fs::path& dir) {
  std::map<std::string, std::string> files;
  if (!fs::exists(dir)) return files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "run.json") continue;
    files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

using Criteria = std::map<int, std::pair<std::string, std::string>>;  // id -> (status, name)

// Lines "criterion N status name"; the rest of stdout names paths and differs between workdirs.
Criteria parse_criteria(const std::string& out) {
  Criteria criteria;
  std::istringstream lines(out);
  for (std::string line; std::getline(lines, line);) {
    std::istringstream ls(line);
    std::string word, status, name;
    int id = 0;
    if (!(ls >> word >> id >> status) || word != "criterion") continue;
    std::getline(ls >> std::ws, name);
    criteria[id] = {status, name};
  }
  return criteria;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "voxelbridge-acceptance";
  const auto a = run_repro(root / "a");
  const auto b = run_repro(root / "b");

  const auto criteria = parse_criteria(a.out);
  const auto fa = outputs(a.dir), fb = outputs(b.dir);
  std::string diff;
  for (const auto& [k, v] : fa) {
    const auto it = fb.find(k);
    if (it == fb.end() || it->second != v) {
      diff = k;
      break;
    }
  }
  if (diff.empty() && fa.size() != fb.size()) diff = "(file sets differ)";
  if (diff.empty() && criteria != parse_criteria(b.out)) diff = "(criterion lines)";
  const bool same = !fa.empty() && diff.empty();

  int failed = 0;
  for (int id = 1; id <= 9; ++id) {
    auto it = criteria.find(id);
    std::string status = it == criteria.end() ? "fail" : it->second.first;
    std::string name = it == criteria.end() ? "(missing from repro output)" : it->second.second;
    std::string note;
    if (id == 9) {
      note = " [" + std::to_string(fa.size()) + " files compared across two processes";
      note += same ? ", identical]" : ", first difference: " + diff + "]";
      if (!same) status = "fail";
    }
    if (status != "pass") ++failed;
    std::cout << "criterion " << id << ": " << (status == "pass" ? "PASS" : status == "skip" ? "SKIP" : "FAIL") << "  "
              << name << note << "\n";
  }
  std::cout << "repro exit codes: " << a.exit_code << ", " << b.exit_code << "\n";
  if (a.exit_code != 0 || b.exit_code != 0) std::cout << slurp(root / "a" / "stderr.txt");
  return failed == 0 && a.exit_code == 0 && b.exit_code == 0 ? 0 : 1;
}
