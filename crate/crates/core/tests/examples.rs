macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));
        }

        #[test]
        fn $name() {
            $name::run().unwrap();
        }
    };
}

example!(block_norms);
example!(routing_instance);
example!(async_simulation);
example!(certify_cycles);
example!(regularization_tradeoff);
example!(queued_delays);
example!(custom_quadratic);
