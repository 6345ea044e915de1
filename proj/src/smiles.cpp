#include "cms/smiles.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>

namespace cms::smiles {

namespace {

bool is_bond_char(char c) {
  return c == '-' || c == '=' || c == '#' || c == ':' || c == '/' || c == '\\';
}

bool is_single_organic(char c) {
  switch (c) {
    case 'B': case 'C': case 'N': case 'O': case 'P': case 'S':
    case 'F': case 'I':
    case 'b': case 'c': case 'n': case 'o': case 'p': case 's':
      return true;
    default:
      return false;
  }
}

// Maximum bond capacity per element. P and S use the top of their valence
// ladders; the per-ladder steps only matter for implied-H counting.
int max_valence(const std::string& element) {
  if (element == "B") return 3;
  if (element == "C") return 4;
  if (element == "N") return 3;
  if (element == "O") return 2;
  if (element == "P") return 5;
  if (element == "S") return 6;
  if (element == "F" || element == "Cl" || element == "Br" || element == "I") return 1;
  if (element == "H") return 1;
  return 0;
}

const std::array<int, 3>& valence_ladder(const std::string& element, int& count) {
  static const std::array<int, 3> b{3, 0, 0}, c{4, 0, 0}, n{3, 0, 0}, o{2, 0, 0},
      p{3, 5, 0}, s{2, 4, 6}, halogen{1, 0, 0}, none{0, 0, 0};
  if (element == "B") { count = 1; return b; }
  if (element == "C") { count = 1; return c; }
  if (element == "N") { count = 1; return n; }
  if (element == "O") { count = 1; return o; }
  if (element == "P") { count = 2; return p; }
  if (element == "S") { count = 3; return s; }
  if (element == "F" || element == "Cl" || element == "Br" || element == "I" ||
      element == "H") {
    count = 1;
    return halogen;
  }
  count = 0;
  return none;
}

int bond_order_units(BondOrder o) {
  switch (o) {
    case BondOrder::Single: return 1;
    case BondOrder::Double: return 2;
    case BondOrder::Triple: return 3;
    case BondOrder::Aromatic: return 1;
  }
  return 1;
}

struct BracketBody {
  Atom atom;
};

// Body of "[...]" without the brackets: isotope? symbol stereo? hcount? charge?
BracketBody parse_bracket_body(std::string_view body, std::size_t position) {
  BracketBody out;
  out.atom.bracket = true;
  std::size_t i = 0;
  auto fail = [&]() -> ParseError {
    return ParseError("bad bracket-atom body", position);
  };

  std::size_t digits = 0;
  while (i + digits < body.size() && std::isdigit(static_cast<unsigned char>(body[i + digits])))
    ++digits;
  if (digits > 0) {
    int iso = 0;
    for (std::size_t k = 0; k < digits; ++k) iso = iso * 10 + (body[i + k] - '0');
    if (iso <= 0 || digits > 3) throw fail();
    out.atom.isotope = iso;
    i += digits;
  }

  if (i >= body.size()) throw fail();
  if (i + 1 < body.size() &&
      ((body[i] == 'C' && body[i + 1] == 'l') || (body[i] == 'B' && body[i + 1] == 'r'))) {
    out.atom.element = std::string(body.substr(i, 2));
    i += 2;
  } else if (is_single_organic(body[i]) || body[i] == 'H') {
    char c = body[i];
    if (std::islower(static_cast<unsigned char>(c))) {
      out.atom.aromatic = true;
      out.atom.element = std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    } else {
      out.atom.element = std::string(1, c);
    }
    ++i;
  } else {
    throw fail();
  }

  if (i < body.size() && body[i] == '@') {
    ++i;
    if (i < body.size() && body[i] == '@') {
      out.atom.stereo = 2;
      ++i;
    } else {
      out.atom.stereo = 1;
    }
  }

  if (i < body.size() && body[i] == 'H') {
    ++i;
    int h = 1;
    if (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) {
      h = body[i] - '0';
      ++i;
    }
    out.atom.explicit_h = h;
  }

  if (i < body.size() && (body[i] == '+' || body[i] == '-')) {
    const int sign = body[i] == '+' ? 1 : -1;
    ++i;
    int magnitude = 1;
    if (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) {
      magnitude = body[i] - '0';
      ++i;
    } else {
      while (i < body.size() && body[i] == (sign > 0 ? '+' : '-')) {
        ++magnitude;
        ++i;
      }
    }
    out.atom.charge = sign * magnitude;
  }

  if (i != body.size()) throw fail();
  return out;
}

}  // namespace

std::vector<PrimitiveToken> tokenize_primitive(std::string_view smiles) {
  if (smiles.empty()) throw ParseError("empty input", 0);
  std::vector<PrimitiveToken> tokens;
  std::size_t i = 0;
  while (i < smiles.size()) {
    const char c = smiles[i];
    if (c == '[') {
      const std::size_t close = smiles.find(']', i + 1);
      if (close == std::string_view::npos) throw UnterminatedBracket(i);
      tokens.push_back({TokenKind::BracketAtom,
                        std::string(smiles.substr(i, close - i + 1)), i});
      i = close + 1;
    } else if (c == '(') {
      tokens.push_back({TokenKind::BranchOpen, "(", i});
      ++i;
    } else if (c == ')') {
      tokens.push_back({TokenKind::BranchClose, ")", i});
      ++i;
    } else if (is_bond_char(c)) {
      tokens.push_back({TokenKind::Bond, std::string(1, c), i});
      ++i;
    } else if (c >= '1' && c <= '9') {
      tokens.push_back({TokenKind::RingClosure, std::string(1, c), i});
      ++i;
    } else if (c == '%') {
      if (i + 2 >= smiles.size() ||
          !std::isdigit(static_cast<unsigned char>(smiles[i + 1])) ||
          !std::isdigit(static_cast<unsigned char>(smiles[i + 2]))) {
        throw UnknownCharacter('%', i);
      }
      tokens.push_back({TokenKind::RingClosure, std::string(smiles.substr(i, 3)), i});
      i += 3;
    } else if (i + 1 < smiles.size() &&
               ((c == 'C' && smiles[i + 1] == 'l') || (c == 'B' && smiles[i + 1] == 'r'))) {
      tokens.push_back({TokenKind::Atom, std::string(smiles.substr(i, 2)), i});
      i += 2;
    } else if (is_single_organic(c)) {
      tokens.push_back({TokenKind::Atom, std::string(1, c), i});
      ++i;
    } else {
      throw UnknownCharacter(c, i);
    }
  }
  return tokens;
}

MolecularGraph parse(std::string_view smiles) {
  if (smiles.empty()) throw ParseError("empty input", 0);
  const std::vector<PrimitiveToken> tokens = tokenize_primitive(smiles);

  MolecularGraph graph;
  graph.source = std::string(smiles);
  std::vector<std::size_t> atom_pos;

  struct RingOpen {
    int atom;
    std::optional<BondOrder> order;
    std::size_t position;
  };
  struct BranchMark {
    int atom;
    std::size_t atoms_at_open;
    std::size_t position;
  };

  std::map<char, RingOpen> open_rings;      // keyed by digit or %nn id
  std::map<int, RingOpen> open_pct_rings;   // %nn closures
  std::vector<BranchMark> branch_stack;
  int prev_atom = -1;
  std::optional<BondOrder> pending;
  std::size_t pending_pos = 0;

  auto has_bond = [&](int a, int b) {
    return std::any_of(graph.bonds.begin(), graph.bonds.end(), [&](const Bond& bond) {
      return (bond.a == a && bond.b == b) || (bond.a == b && bond.b == a);
    });
  };

  auto add_atom = [&](Atom atom, std::size_t pos) {
    graph.atoms.push_back(std::move(atom));
    atom_pos.push_back(pos);
    const int cur = static_cast<int>(graph.atoms.size()) - 1;
    if (prev_atom >= 0) {
      BondOrder order = BondOrder::Single;
      if (pending) {
        order = *pending;
      } else if (graph.atoms[prev_atom].aromatic && graph.atoms[cur].aromatic) {
        order = BondOrder::Aromatic;
      }
      graph.bonds.push_back({prev_atom, cur, order});
    } else if (pending) {
      throw ParseError("bond with no preceding atom", pending_pos);
    }
    pending.reset();
    prev_atom = cur;
  };

  auto close_ring = [&](RingOpen& open, std::size_t pos) {
    if (open.atom == prev_atom) throw ParseError("ring closure to self", pos);
    if (pending && open.order && *pending != *open.order)
      throw ParseError("conflicting ring-closure bond orders", pos);
    BondOrder order;
    if (pending) {
      order = *pending;
    } else if (open.order) {
      order = *open.order;
    } else if (graph.atoms[open.atom].aromatic && graph.atoms[prev_atom].aromatic) {
      order = BondOrder::Aromatic;
    } else {
      order = BondOrder::Single;
    }
    if (has_bond(open.atom, prev_atom)) throw ParseError("duplicate bond", pos);
    graph.bonds.push_back({open.atom, prev_atom, order});
    pending.reset();
  };

  for (const PrimitiveToken& token : tokens) {
    switch (token.kind) {
      case TokenKind::Atom: {
        Atom atom;
        if (std::islower(static_cast<unsigned char>(token.text[0]))) {
          atom.aromatic = true;
          atom.element = token.text;
          atom.element[0] =
              static_cast<char>(std::toupper(static_cast<unsigned char>(atom.element[0])));
        } else {
          atom.element = token.text;
        }
        add_atom(std::move(atom), token.position);
        break;
      }
      case TokenKind::BracketAtom: {
        const std::string_view body =
            std::string_view(token.text).substr(1, token.text.size() - 2);
        add_atom(parse_bracket_body(body, token.position).atom, token.position);
        break;
      }
      case TokenKind::Bond: {
        if (pending) throw ParseError("two consecutive bonds", token.position);
        if (prev_atom < 0) throw ParseError("bond with no preceding atom", token.position);
        switch (token.text[0]) {
          case '-': case '/': case '\\': pending = BondOrder::Single; break;
          case '=': pending = BondOrder::Double; break;
          case '#': pending = BondOrder::Triple; break;
          case ':': pending = BondOrder::Aromatic; break;
        }
        pending_pos = token.position;
        break;
      }
      case TokenKind::RingClosure: {
        if (prev_atom < 0) throw ParseError("ring closure with no preceding atom", token.position);
        if (token.text[0] == '%') {
          const int id = (token.text[1] - '0') * 10 + (token.text[2] - '0');
          auto it = open_pct_rings.find(id);
          if (it == open_pct_rings.end()) {
            open_pct_rings.emplace(id, RingOpen{prev_atom, pending, token.position});
            pending.reset();
          } else {
            close_ring(it->second, token.position);
            open_pct_rings.erase(it);
          }
        } else {
          auto it = open_rings.find(token.text[0]);
          if (it == open_rings.end()) {
            open_rings.emplace(token.text[0], RingOpen{prev_atom, pending, token.position});
            pending.reset();
          } else {
            close_ring(it->second, token.position);
            open_rings.erase(it);
          }
        }
        break;
      }
      case TokenKind::BranchOpen: {
        if (prev_atom < 0) throw ParseError("branch with no preceding atom", token.position);
        if (pending) throw ParseError("bond before branch", token.position);
        branch_stack.push_back({prev_atom, graph.atoms.size(), token.position});
        break;
      }
      case TokenKind::BranchClose: {
        if (branch_stack.empty()) throw ParseError("unmatched branch", token.position);
        if (pending) throw ParseError("dangling bond", token.position);
        if (graph.atoms.size() == branch_stack.back().atoms_at_open)
          throw ParseError("empty branch", token.position);
        prev_atom = branch_stack.back().atom;
        branch_stack.pop_back();
        break;
      }
    }
  }

  if (pending) throw ParseError("dangling bond", pending_pos);
  if (!branch_stack.empty())
    throw ParseError("unmatched branch", branch_stack.back().position);
  if (!open_rings.empty())
    throw ParseError("unpaired ring closure", open_rings.begin()->second.position);
  if (!open_pct_rings.empty())
    throw ParseError("unpaired ring closure", open_pct_rings.begin()->second.position);

  // Lightweight valence screen. Aromatic bonds count 1 here: fused ring
  // junctions and pyrrole-type nitrogens overflow under a 1.5-per-bond
  // convention even for ordinary drug-like molecules.
  for (std::size_t i = 0; i < graph.atoms.size(); ++i) {
    const Atom& atom = graph.atoms[i];
    int load = atom.explicit_h;
    for (const Bond& bond : graph.bonds) {
      if (bond.a == static_cast<int>(i) || bond.b == static_cast<int>(i))
        load += bond_order_units(bond.order);
    }
    const int allowed = std::max(0, max_valence(atom.element) + atom.charge);
    if (load > allowed)
      throw ParseError("valence violation on " + atom.element, atom_pos[i]);
  }

  return graph;
}

int MolecularGraph::degree(int atom) const {
  int d = 0;
  for (const Bond& bond : bonds)
    if (bond.a == atom || bond.b == atom) ++d;
  return d;
}

int MolecularGraph::hydrogen_count(int atom) const {
  const Atom& a = atoms[atom];
  if (a.bracket) return a.explicit_h;

  int sigma = 0;
  for (const Bond& bond : bonds) {
    if (bond.a != atom && bond.b != atom) continue;
    switch (bond.order) {
      case BondOrder::Single: sigma += 1; break;
      case BondOrder::Double: sigma += 2; break;
      case BondOrder::Triple: sigma += 3; break;
      case BondOrder::Aromatic: sigma += 1; break;
    }
  }
  if (a.aromatic && (a.element == "C" || a.element == "N" || a.element == "P"))
    sigma += 1;  // one delocalized double-bond share

  int ladder_size = 0;
  const auto& ladder = valence_ladder(a.element, ladder_size);
  for (int k = 0; k < ladder_size; ++k) {
    if (ladder[k] >= sigma) return ladder[k] - sigma;
  }
  return 0;
}

Validity is_valid(std::string_view smiles) noexcept {
  try {
    if (smiles.empty()) return {false, "empty input"};
    parse(smiles);
    return {true, std::nullopt};
  } catch (const ParseError& e) {
    return {false, e.what()};
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
}

}  // namespace cms::smiles
