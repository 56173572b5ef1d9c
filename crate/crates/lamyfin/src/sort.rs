//! Simple types over the base sort `o`, called *sorts* to keep them apart
//! from the intersection types of [`crate::types`].

use std::fmt;

/// A sort: either the base sort `o` or an arrow between two sorts.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Sort {
    Base,
    Arrow(Box<Sort>, Box<Sort>),
}

impl Sort {
    pub fn arrow(arg: Sort, res: Sort) -> Sort {
        Sort::Arrow(Box::new(arg), Box::new(res))
    }

    /// Builds `a1 -> a2 -> ... -> o` from argument sorts.
    pub fn from_args(args: &[Sort]) -> Sort {
        let mut s = Sort::Base;
        for a in args.iter().rev() {
            s = Sort::arrow(a.clone(), s);
        }
        s
    }

    /// ord(o) = 0, ord(a -> b) = max(1 + ord(a), ord(b)).
    pub fn order(&self) -> u8 {
        match self {
            Sort::Base => 0,
            Sort::Arrow(a, b) => (1 + a.order()).max(b.order()),
        }
    }

    pub fn is_base(&self) -> bool {
        matches!(self, Sort::Base)
    }

    pub fn as_arrow(&self) -> Option<(&Sort, &Sort)> {
        match self {
            Sort::Arrow(a, b) => Some((a, b)),
            Sort::Base => None,
        }
    }

    /// Argument sorts in order, for a sort viewed as `a1 -> ... -> ak -> o`.
    pub fn arg_sorts(&self) -> Vec<&Sort> {
        let mut out = Vec::new();
        let mut cur = self;
        while let Sort::Arrow(a, b) = cur {
            out.push(a.as_ref());
            cur = b;
        }
        out
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sort::Base => write!(f, "o"),
            Sort::Arrow(a, b) => {
                if a.is_base() {
                    write!(f, "o->{}", b)
                } else {
                    write!(f, "({})->{}", a, b)
                }
            }
        }
    }
}

/// Parses a sort written as `o`, `o->o`, `(o->o)->o`, ... (right-associative).
pub fn parse_sort(input: &str) -> Result<Sort, String> {
    let mut p = SortParser {
        chars: input.trim(),
        pos: 0,
    };
    let s = p.parse_arrow()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(format!("trailing input in sort at byte {}", p.pos));
    }
    Ok(s)
}

struct SortParser<'a> {
    chars: &'a str,
    pos: usize,
}

impl<'a> SortParser<'a> {
    fn skip_ws(&mut self) {
        while self.chars[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
    }

    fn parse_arrow(&mut self) -> Result<Sort, String> {
        let lhs = self.parse_atom()?;
        self.skip_ws();
        if self.chars[self.pos..].starts_with("->") {
            self.pos += 2;
            let rhs = self.parse_arrow()?;
            Ok(Sort::arrow(lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn parse_atom(&mut self) -> Result<Sort, String> {
        self.skip_ws();
        if self.chars[self.pos..].starts_with('o') {
            self.pos += 1;
            Ok(Sort::Base)
        } else if self.chars[self.pos..].starts_with('(') {
            self.pos += 1;
            let s = self.parse_arrow()?;
            self.skip_ws();
            if !self.chars[self.pos..].starts_with(')') {
                return Err(format!("expected ')' at byte {}", self.pos));
            }
            self.pos += 1;
            Ok(s)
        } else {
            Err(format!("expected 'o' or '(' at byte {}", self.pos))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_follow_the_recursion() {
        let o = Sort::Base;
        assert_eq!(o.order(), 0);
        let oo = Sort::arrow(o.clone(), o.clone());
        assert_eq!(oo.order(), 1);
        assert_eq!(Sort::arrow(oo.clone(), o.clone()).order(), 2);
        // max(1 + ord(o), ord(o->o)) = max(1, 1)
        assert_eq!(Sort::arrow(o.clone(), oo.clone()).order(), 1);
    }

    #[test]
    fn display_parse_round_trip() {
        for s in ["o", "o->o", "(o->o)->o", "o->o->o", "((o->o)->o)->o->o"] {
            let sort = parse_sort(s).unwrap();
            assert_eq!(sort.to_string(), s);
            assert_eq!(parse_sort(&sort.to_string()).unwrap(), sort);
        }
    }
}
