//! Parses, checks, prints and evaluates a script outside of any machine.

use orc::script::{check, evaluate, parse, print_program, DetachedHost, Interface, ScriptContext, DEFAULT_STEP_BUDGET};
use orc::value::{DataType, Value, ValueMap};

const SRC: &str = r#"
total = 0
i = 0
while i < len(items) {
  total = total + items[i]
  i = i + 1
}
set_global("last_total", total)
if total > limit { return "over" }
sum = total
return "success"
"#;

fn main() {
    let program = parse(SRC).unwrap();
    print!("{}", print_program(&program));

    let iface = Interface {
        inputs: ["items", "limit"].into(),
        outputs: ["sum"].into(),
        outcomes: ["success", "over"].into(),
    };
    for f in check(&program, &iface) {
        println!("finding: {f:?}");
    }

    let inputs: ValueMap = [
        ("items".to_string(), Value::List(vec![Value::Int(3), Value::Int(4), Value::Int(5)])),
        ("limit".to_string(), Value::Int(100)),
    ]
    .into_iter()
    .collect();
    let host = DetachedHost::default();
    let r = evaluate(&program, ScriptContext {
        inputs: &inputs,
        outputs: [("sum".to_string(), Value::Int(0))].into_iter().collect(),
        // Only names listed here are outputs; anything else assigned is a local.
        output_types: [("sum".to_string(), DataType::Int)].into_iter().collect(),
        host: &host,
        step_budget: DEFAULT_STEP_BUDGET,
        rng_seed: 0,
    })
    .unwrap();
    println!("-> {} {:?} in {} statements", r.outcome_name, r.outputs, r.statements_executed);
    println!("globals: {:?}", host.globals());

    let bad = parse("x = (1 +").unwrap_err();
    println!("{bad}");
}
