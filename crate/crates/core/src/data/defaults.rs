//! Built-in generator content: twelve customer-service intents whose
//! decision tables reach 35 distinct canned replies.

use std::collections::BTreeMap;

use super::schema::build_default_schema;
use super::synth::{
    Candidate, Dependency, Intent, Rule, SynthConfig, TextMaterial, SYNTH_FORMAT,
};

const SHIPPED: &str = "Shipped";
const STATUS: &str = "Delivery status";
const AREA: &str = "Consignee's area";
const SERVICE: &str = "Delivery service type";
const STOCK: &str = "Stock information";
const RETURN: &str = "Return goods received";
const REFUND: &str = "Refund processing status";

const CANDIDATES: [(&str, &str); 35] = [
    ("mark_as_urgent", "we have marked your order as urgent and the warehouse will send it with express delivery today"),
    ("upgrade_to_expedite", "your order has not left yet so we can upgrade it to express delivery if you wish"),
    ("faster_expedited", "your parcel is already on the express route and should reach you within two working days"),
    ("cannot_guarantee", "we are sorry but we cannot guarantee a delivery date once the parcel is with the courier"),
    ("not_yet_shipped", "your order has not shipped yet and we will send you the tracking number as soon as it leaves"),
    ("in_transit", "your parcel is on the way and the tracking shows normal progress"),
    ("delay_apology", "we apologise for the delay in delivery and we are chasing the courier for you"),
    ("deliver_failed", "the courier could not deliver your parcel please contact them to arrange a new attempt"),
    ("redelivery", "a redelivery has been arranged and the courier will visit again soon"),
    ("missing_parcel", "we are sorry your parcel is missing we have opened an investigation with the courier"),
    ("ship_soon", "the item is in stock and your order will ship within one working day"),
    ("when_instock", "the item is out of stock at the moment and we expect new stock in about two weeks"),
    ("wish_to_wait", "thank you for your patience we will ship your order as soon as new stock arrives"),
    ("already_available", "good news the item is already available again and we will ship it now"),
    ("cannot_be_changed", "sorry your order has already shipped so it can no longer be changed"),
    ("order_changed", "no problem we have updated your order as requested"),
    ("wish_to_change", "the new item is out of stock would you like to choose something else or keep waiting"),
    ("cancellation_done", "your order has been cancelled and you will receive a full refund"),
    ("cannot_cancel", "sorry your order has already shipped so we cannot cancel it but you can return it after delivery"),
    ("how_to_return", "to return the item please use the return label in your account and send it back to us"),
    ("return_received", "we have received your returned item and will process it shortly"),
    ("please_wait_return", "your return has not reached us yet please allow a few more days for it to arrive"),
    ("refund_completed", "your refund has been completed and should appear on your statement within five days"),
    ("refund_in_progress", "we have your return and the refund is being processed now"),
    ("refund_awaiting_return", "your refund will be processed once the returned item reaches our warehouse"),
    ("refund_not_requested", "we cannot find a refund request for this order please open one from your account"),
    ("change_size_before_shipping", "your order has not shipped yet so we can change the size for you now"),
    ("advise_refund", "the parcel is already on its way please return it after delivery and order the right size"),
    ("wait_for_delivery", "please wait until the parcel arrives and then request an exchange for another size"),
    ("shipping_us", "shipping to the united states is free for orders over fifty dollars"),
    ("shipping_gb", "shipping within great britain costs three pounds for standard delivery"),
    ("shipping_intl", "international shipping is charged by weight and shown at checkout"),
    ("invoice_lead_time", "we will email your invoice within three working days"),
    ("customs_notice", "import duties may apply in your country and are paid to the courier on delivery"),
    ("no_customs_fee", "there are no customs fees for deliveries to your area"),
];

fn rule(when: &[(&str, &[&str])], answer: &str) -> Rule {
    Rule {
        when: when
            .iter()
            .map(|(c, vs)| (c.to_string(), vs.iter().map(|v| v.to_string()).collect()))
            .collect(),
        answer: answer.into(),
    }
}

fn intent(name: &str, reads: &[&str], rules: Vec<Rule>, templates: &[&str]) -> Intent {
    Intent {
        name: name.into(),
        weight: 1.0,
        reads: reads.iter().map(|s| s.to_string()).collect(),
        rules,
        templates: templates.iter().map(|s| s.to_string()).collect(),
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn intents() -> Vec<Intent> {
    vec![
        intent(
            "delivery-urgency",
            &[SHIPPED, SERVICE],
            vec![
                rule(&[(SHIPPED, &["No"]), (SERVICE, &["Expedite service"])], "mark_as_urgent"),
                rule(&[(SHIPPED, &["No"])], "upgrade_to_expedite"),
                rule(&[(SERVICE, &["Expedite service"])], "faster_expedited"),
                rule(&[], "cannot_guarantee"),
            ],
            &[
                "i need this item by friday morning could you please send it as soon as possible",
                "my daughter needs this dress for her show next saturday please hurry",
                "is there any way to get my order faster i need it for a wedding this weekend",
            ],
        ),
        intent(
            "where-is-my-order",
            &[SHIPPED, STATUS],
            vec![
                rule(&[(SHIPPED, &["No"])], "not_yet_shipped"),
                rule(&[(STATUS, &["Normal"])], "in_transit"),
                rule(&[(STATUS, &["Delay"])], "delay_apology"),
                rule(&[(STATUS, &["Deliver failed"])], "deliver_failed"),
                rule(&[(STATUS, &["Redelivery"])], "redelivery"),
                rule(&[(STATUS, &["Missing"])], "missing_parcel"),
            ],
            &[
                "where is my order i have been waiting for a long time",
                "could you give me an update on my parcel please",
                "i ordered five shirts and they have not arrived what is going on",
            ],
        ),
        intent(
            "stock-inquiry",
            &[STOCK],
            vec![
                rule(&[(STOCK, &["In stock"])], "ship_soon"),
                rule(&[(STOCK, &["Out of stock"])], "when_instock"),
            ],
            &[
                "is this item still available to buy right now",
                "when will the blue jacket be ready to ship to me",
                "do you have this item in the large size at the moment",
            ],
        ),
        intent(
            "wish-to-wait",
            &[STOCK],
            vec![
                rule(&[(STOCK, &["Out of stock"])], "wish_to_wait"),
                rule(&[(STOCK, &["In stock"])], "already_available"),
            ],
            &[
                "thank you for the update i will wait for the new stock to come in",
                "no problem at all i am happy to wait for the item",
                "i do not mind waiting please keep my order open for now",
            ],
        ),
        intent(
            "change-order",
            &[SHIPPED, STOCK],
            vec![
                rule(&[(SHIPPED, &["Yes"])], "cannot_be_changed"),
                rule(&[(STOCK, &["In stock"])], "order_changed"),
                rule(&[], "wish_to_change"),
            ],
            &[
                "can i change the colour of my order to black instead",
                "i would like to swap the item in my order for a different model",
                "please change my order to the medium size instead of the small",
            ],
        ),
        intent(
            "cancel-order",
            &[SHIPPED],
            vec![
                rule(&[(SHIPPED, &["No"])], "cancellation_done"),
                rule(&[(SHIPPED, &["Yes"])], "cannot_cancel"),
            ],
            &[
                "please cancel this order i do not need it any more",
                "i want to cancel my purchase because i found it cheaper elsewhere",
                "i ordered this by mistake can you cancel it for me",
            ],
        ),
        intent(
            "return-status",
            &[RETURN],
            vec![
                rule(&[(RETURN, &["Null"])], "how_to_return"),
                rule(&[(RETURN, &["Yes"])], "return_received"),
                rule(&[(RETURN, &["No"])], "please_wait_return"),
            ],
            &[
                "could you please tell me whether you have my returned order",
                "did my return arrive at your warehouse or not",
                "what is happening with the item i wanted to send back",
            ],
        ),
        intent(
            "refund-status",
            &[REFUND, RETURN],
            vec![
                rule(&[(REFUND, &["Refunded"])], "refund_completed"),
                rule(&[(REFUND, &["Null"])], "refund_not_requested"),
                rule(&[(RETURN, &["Yes"])], "refund_in_progress"),
                rule(&[], "refund_awaiting_return"),
            ],
            &[
                "when will i get my money for this order back",
                "can you check the status of my refund please",
                "i am still waiting for my money to come back to my card",
            ],
        ),
        intent(
            "size-exchange",
            &[SHIPPED, STATUS],
            vec![
                rule(&[(SHIPPED, &["No"])], "change_size_before_shipping"),
                rule(&[(STATUS, &["Normal"])], "advise_refund"),
                rule(&[], "wait_for_delivery"),
            ],
            &[
                "the shirt i ordered is too big can i swap it for a smaller one",
                "i need a different size can i exchange this order",
                "these shoes will not fit me can i get the next size up",
            ],
        ),
        intent(
            "shipping-charge",
            &[AREA],
            vec![
                rule(&[(AREA, &["US"])], "shipping_us"),
                rule(&[(AREA, &["GB"])], "shipping_gb"),
                rule(&[], "shipping_intl"),
            ],
            &[
                "how much does shipping cost for this order",
                "why was i charged so much for delivery on this order",
                "what is the postage charge to my address please",
            ],
        ),
        intent(
            "invoice",
            &[],
            vec![rule(&[], "invoice_lead_time")],
            &[
                "can you send me an invoice for my order please",
                "i need a vat invoice for my company accounts",
                "how long does it take to receive the invoice for my purchase",
            ],
        ),
        intent(
            "customs",
            &[AREA],
            vec![
                rule(&[(AREA, &["NG", "Other site"])], "customs_notice"),
                rule(&[], "no_customs_fee"),
            ],
            &[
                "will i have to pay any import tax on this order",
                "do i need to pay customs duty when the parcel arrives",
                "are there extra fees at the border for my order",
            ],
        ),
    ]
}

fn clues() -> BTreeMap<String, BTreeMap<String, Vec<String>>> {
    let table: [(&str, &[(&str, &[&str])]); 7] = [
        (
            SHIPPED,
            &[
                ("Yes", &["the parcel left your warehouse", "i got a dispatch email"]),
                ("No", &["the order still says processing", "nothing was sent out yet"]),
            ],
        ),
        (
            STATUS,
            &[
                ("Null", &["there is no tracking yet", "no tracking number is shown"]),
                ("Normal", &["tracking looks normal", "courier updates look fine"]),
                ("Delay", &["tracking has not moved for days", "the courier says it is late"]),
                ("Deliver failed", &["the delivery attempt failed", "nobody could deliver it"]),
                ("Redelivery", &["a redelivery is booked", "the driver will come again"]),
                ("Missing", &["tracking says the parcel is lost", "the courier lost my parcel"]),
            ],
        ),
        (
            AREA,
            &[
                ("US", &["i live in texas", "my address is in new york"]),
                ("NG", &["i live in lagos", "my address is in abuja"]),
                ("GB", &["i live in london", "my address is in manchester"]),
                ("Other site", &["i live in sydney", "my address is in toronto"]),
            ],
        ),
        (
            SERVICE,
            &[
                ("Null", &["i picked no delivery option", "the delivery option was blank"]),
                ("Expedite service", &["i paid for express delivery", "i chose fast shipping"]),
                ("Normal", &["i chose standard delivery", "i picked the cheapest postage"]),
            ],
        ),
        (
            STOCK,
            &[
                ("In stock", &["the page says in stock", "the item shows as available"]),
                ("Out of stock", &["the page says sold out", "the item shows as unavailable"]),
            ],
        ),
        (
            RETURN,
            &[
                ("Null", &["i never sent anything back", "no return was started"]),
                ("Yes", &["you signed for my return", "my return reached you"]),
                ("No", &["i posted the return recently", "the return is still travelling"]),
            ],
        ),
        (
            REFUND,
            &[
                ("Null", &["i never asked for a refund", "no refund was requested"]),
                ("Unprocessed", &["my refund is still pending", "the refund request is unanswered"]),
                ("Refunded", &["the refund already arrived", "i got my money back"]),
            ],
        ),
    ];
    table
        .iter()
        .map(|(c, vs)| {
            (
                c.to_string(),
                vs.iter().map(|(v, ps)| (v.to_string(), strings(ps))).collect(),
            )
        })
        .collect()
}

fn priors() -> BTreeMap<String, Vec<f64>> {
    [
        (SHIPPED, vec![0.6, 0.4]),
        (STATUS, vec![1.0, 0.4, 0.2, 0.13, 0.13, 0.14, 0.0]),
        (AREA, vec![0.35, 0.15, 0.35, 0.15]),
        (SERVICE, vec![0.1, 0.35, 0.55]),
        (STOCK, vec![0.6, 0.4]),
        (RETURN, vec![0.5, 0.25, 0.25]),
        (REFUND, vec![0.45, 0.3, 0.25]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn dependency(when: &str, is: &[&str], then: &str, allowed: &[&str]) -> Dependency {
    Dependency {
        when: when.into(),
        is: strings(is),
        then: then.into(),
        allowed: strings(allowed),
    }
}

/// Default generator configuration over the seven order conditions.
pub fn default_synth_config() -> SynthConfig {
    SynthConfig {
        format: SYNTH_FORMAT.into(),
        schema: build_default_schema(),
        priors: priors(),
        dependencies: vec![
            dependency(SHIPPED, &["No"], STATUS, &["Null"]),
            dependency(
                SHIPPED,
                &["Yes"],
                STATUS,
                &["Normal", "Delay", "Deliver failed", "Redelivery", "Missing"],
            ),
            dependency(SHIPPED, &["No"], RETURN, &["Null"]),
        ],
        candidates: CANDIDATES
            .iter()
            .map(|(n, t)| Candidate {
                name: n.to_string(),
                text: t.to_string(),
            })
            .collect(),
        intents: intents(),
        clues: clues(),
        text: TextMaterial {
            greetings: strings(&[
                "hi", "hello", "hello there", "good morning", "good afternoon", "dear seller", "hi team",
            ]),
            closings: strings(&["thanks", "many thanks", "thank you", "regards", "cheers", "please help", "thanks a lot"]),
            connectors: strings(&["also", "and", "btw", "plus", "note"]),
            fillers: strings(&[
                "i have been a loyal customer for years",
                "this is my first order with you",
                "i really like your shop",
                "sorry for the trouble",
            ]),
            openers: strings(&["hello", "hi again", "about my order", "quick question", "me again", "good day"]),
            vague: [
                (SHIPPED, &["i am not sure if it shipped", "whatever the shipping state is"][..]),
                (STATUS, &["about the delivery", "regarding the tracking"]),
                (AREA, &["about where it goes", "for my address"]),
                (SERVICE, &["about the service i picked", "for the option i chose"]),
                (STOCK, &["about the stock", "if you have it"]),
                (RETURN, &["about my return", "for the item i sent back"]),
                (REFUND, &["about the money", "regarding my refund"]),
            ]
            .into_iter()
            .map(|(c, ps)| (c.to_string(), strings(ps)))
            .collect(),
            question_clue_rate: 0.6,
            context_clue_rate: 0.95,
            filler_rate: 0.3,
            history_turns: vec![0.02, 0.2, 0.5, 0.28],
        },
    }
}
