use std::path::Path;
use std::process::Command;

const HEADER: &str = include_str!("../include/hero.h");

#[test]
fn header_declares_every_export() {
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 15);
    for name in exports {
        assert!(HEADER.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["HeroTrace", "HeroAllocation", "HeroMasks", "HERO_STATUS_BUFFER_TOO_SMALL"] {
        assert!(HEADER.contains(ty));
    }
}

#[test]
fn header_compiles_as_c_and_cxx() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("use.c");
    std::fs::write(
        &c,
        "#include \"hero.h\"\n\
         int probe(const uint8_t *b, size_t n) {\n\
           HeroTrace *t = NULL;\n\
           if (hero_trace_read(b, n, &t) != HERO_STATUS_OK) return 1;\n\
           HeroTraceInfo info;\n\
           hero_trace_info(t, &info);\n\
           hero_trace_free(t);\n\
           return (int)info.num_tiles;\n\
         }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = match Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(&include)
            .arg(&c)
            .status()
        {
            Ok(s) => s,
            Err(_) => {
                eprintln!("{compiler} not found; skipping");
                continue;
            }
        };
        assert!(status.success(), "{compiler} rejected hero.h");
    }
}
