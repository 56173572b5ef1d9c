fn main() {
    let text = std::fs::read_to_string("schemes/p4.hors").unwrap();
    let s = lamyfin::parse_scheme(&text).unwrap();
    eprintln!("parsed");
    let t = lamyfin::scheme_to_term(&s).unwrap();
    eprintln!("converted, term size printed len = {}", t.to_string().len());
    let c = lamyfin::Closure::build(&t).unwrap();
    eprintln!("closure: {} nodes, complexity {}", c.len(), c.complexity());
}
